import numpy as np
import pytest
import sympy as sp
from scipy.integrate import quad

from wcstab.errors import ValidationError
from wcstab.manifold import Grid
from wcstab.model import (
    Configuration,
    ModelData,
    derived_constants,
    effective_potential,
    eom_jvp,
    eom_residual,
    mass_identity_rhs,
    mass_squared,
    mass_terms,
    nonperturbative,
)
from wcstab.verify import mass_second_difference, random_smooth_field, variational_errors, variational_order

TWO_PI = 2 * np.pi


def balance_data(grid, T0=0.5, **kw):
    z = grid.constant(0.0)
    return ModelData(grid=grid, q=3, alpha=kw.pop("alpha", 0.0), beta=kw.pop("beta", 0.0), R=z, T_string=grid.constant(T0), flux_sq={3: grid.constant(2 * T0)}, **kw)


def q7_constant_data(grid):
    return ModelData(
        grid=grid, q=7, alpha=1.0, beta=-2 / 3, R=grid.constant(0.5), T_string=grid.constant(0.5), flux_sq={1: grid.constant(4.0)}
    )


def generic_data(grid, rng, q):
    x = grid.coordinates()
    def smooth(c, amp):
        return c + amp * np.sin(sum(TWO_PI * xi / L for xi, L in zip(x, grid.lengths)) + rng.uniform(0, TWO_PI))
    return ModelData(
        grid=grid,
        q=q,
        alpha=rng.uniform(0.1, 1.0),
        beta=rng.uniform(-1.0, 1.0),
        R=smooth(rng.uniform(-1, 1), 0.2),
        T_string=smooth(rng.uniform(0, 1), 0.1),
        flux_sq={p: smooth(1.0, 0.3) for p in (0, 1, 2, 3, 4, 5, 6)},
    )


def generic_cfg(grid, rng):
    return Configuration(1 + random_smooth_field(grid, rng, 0.2), 1 + random_smooth_field(grid, rng, 0.2))


# -- validation --------------------------------------------------------------------------


def test_configuration_requires_positive_fields():
    g = Grid((8,), (1.0,))
    with pytest.raises(ValidationError):
        Configuration(g.constant(1.0), g.constant(0.0))
    with pytest.raises(ValidationError):
        Configuration(-g.constant(1.0), g.constant(1.0))


def test_model_data_validation():
    g = Grid((8,), (1.0,))
    z = g.constant(0.0)
    with pytest.raises(ValidationError):
        ModelData(grid=g, q=4, alpha=0, beta=0, R=z, T_string=z)
    with pytest.raises(ValidationError):
        ModelData(grid=g, q=3, alpha=0, beta=0, R=z, T_string=z, flux_sq={3: g.constant(-0.1)})
    with pytest.raises(ValidationError):
        ModelData(grid=g, q=3, alpha=0, beta=0, R=z, T_string=z, flux_sq={7: g.constant(1.0)})
    with pytest.raises(ValidationError):
        ModelData(grid=g, q=3, alpha=0, beta=0, R=np.zeros(9), T_string=z)


# -- effective potential ---------------------------------------------------------------------


def test_potential_zero_data():
    g = Grid((8,), (1.0,))
    z = g.constant(0.0)
    data = ModelData(grid=g, q=3, alpha=0, beta=0, R=z, T_string=z)
    one = Configuration.constant(g, 1.0, 1.0)
    assert effective_potential(data, one, 1.0, 1.0) == 0.0


def test_potential_balance_cancels():
    g = Grid((16,), (2.0,))
    one = Configuration.constant(g, 1.0, 1.0)
    assert abs(effective_potential(balance_data(g, 0.7), one, 1.0, 1.0)) < 1e-15


def test_potential_matches_quadrature_oracle():
    L = 3.0
    g = Grid((64,), (L,))
    (x,) = g.coordinates()
    R0, T0, F = 0.3, 0.2, {1: 0.4, 3: 0.9, 5: 0.1}
    alpha, beta, newton_G, target_vol = 0.7, -0.4, 0.25, 2.5
    data = ModelData(
        grid=g, q=5, alpha=alpha, beta=beta, R=g.constant(R0), T_string=g.constant(T0), flux_sq={p: g.constant(f) for p, f in F.items()}
    )
    cfg = Configuration(1 + 0.1 * np.sin(TWO_PI * x / L), g.constant(1.0))

    def u(s):
        return 1 + 0.1 * np.sin(TWO_PI * s / L)

    def du(s):
        return 0.1 * TWO_PI / L * np.cos(TWO_PI * s / L)

    def density(s):
        # v = 1: the gradient coupling of v vanishes and every power of v is 1
        return 0.5 * (-u(s) ** 2 * R0 - 3 * du(s) ** 2 + 0.5 * u(s) ** 2 * sum(F.values()) - u(s) ** 2 * T0) - alpha * u(s)

    oracle = quad(density, 0, L, epsabs=1e-13, epsrel=1e-13, limit=200)[0] + alpha / newton_G + beta * (target_vol - L)
    assert effective_potential(data, cfg, newton_G, target_vol) == pytest.approx(oracle, rel=1e-10)


# -- equations of motion ------------------------------------------------------------------------


def test_balance_point_is_exact_solution():
    g = Grid((64,), (TWO_PI,))
    res = eom_residual(balance_data(g), Configuration.constant(g, 1.0, 1.0))
    assert res.max_norm() < 1e-12


def test_q7_constant_point_is_exact_solution():
    g = Grid((64,), (TWO_PI,))
    res = eom_residual(q7_constant_data(g), Configuration.constant(g, 1.0, 1.0))
    assert res.max_norm() < 1e-12


@pytest.mark.parametrize("q", [3, 5, 7])
def test_residual_matches_symbolic_expansion(q):
    # sympy differentiates the undisplayed (divergence-form) equations directly
    s = sp.symbols("x", real=True)
    u_e = 1 + sp.Rational(1, 10) * sp.sin(s) + sp.Rational(1, 20) * sp.cos(2 * s)
    v_e = 1 + sp.Rational(1, 10) * sp.cos(s) - sp.Rational(1, 25) * sp.sin(3 * s)
    R_e = sp.Rational(3, 10) + sp.Rational(1, 10) * sp.cos(s)
    T_e = sp.Rational(1, 5) + sp.Rational(1, 20) * sp.sin(s)
    F_e = {1: 1 + sp.Rational(1, 5) * sp.cos(s), 3: sp.Rational(1, 2) + sp.Rational(1, 10) * sp.sin(2 * s), 6: sp.Rational(1, 3)}
    alpha, beta = sp.Rational(7, 10), sp.Rational(-3, 10)
    e1, e2 = sp.Rational(q - 3, 2), sp.Rational(q - 5, 2)
    D = lambda f: sp.diff(f, s)  # noqa: E731

    first = (
        10 * u_e * v_e * D(D(v_e))
        + 6 * D(v_e**2 * D(u_e))
        - 2 * u_e * v_e**2 * R_e
        + u_e * sum(v_e ** (3 - p) * f for p, f in F_e.items())
        - 2 * u_e * v_e**e1 * T_e
        - 2 * alpha * v_e**3
    )
    second = (
        5 * D(D(u_e**2 * v_e))
        + 5 * u_e**2 * D(D(v_e))
        - 2 * u_e**2 * v_e * R_e
        - 6 * v_e * D(u_e) ** 2
        + u_e**2 / 2 * sum((3 - p) * v_e ** (2 - p) * f for p, f in F_e.items())
        - e1 * u_e**2 * v_e**e2 * T_e
        - 6 * (alpha * u_e * v_e**2 + beta * v_e**2)
    )
    f1, f2 = sp.lambdify(s, first, "numpy"), sp.lambdify(s, second, "numpy")
    to_np = lambda e: np.broadcast_to(sp.lambdify(s, e, "numpy")(x), x.shape).astype(float)  # noqa: E731

    g = Grid((32,), (TWO_PI,))
    (x,) = g.coordinates()
    data = ModelData(
        grid=g,
        q=q,
        alpha=float(alpha),
        beta=float(beta),
        R=to_np(R_e),
        T_string=to_np(T_e),
        flux_sq={p: to_np(f) for p, f in F_e.items()},
    )
    res = eom_residual(data, Configuration(to_np(u_e), to_np(v_e)))
    nodes = np.random.default_rng(q).choice(32, size=10, replace=False)
    np.testing.assert_allclose(res.first[nodes], f1(x[nodes]), rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(res.second[nodes], f2(x[nodes]), rtol=1e-9, atol=1e-12)


def test_constant_u_scaling():
    g = Grid((32,), (TWO_PI,))
    rng = np.random.default_rng(11)
    data = generic_data(g, rng, 5)
    v = 1 + random_smooth_field(g, rng, 0.2)
    c = 1.7
    at_c = eom_residual(data, Configuration(g.constant(c), v))
    rescaled = data.replace(alpha=data.alpha / c, beta=data.beta / c**2)
    at_1 = eom_residual(rescaled, Configuration(g.constant(1.0), v))
    np.testing.assert_allclose(at_c.first / c, at_1.first, atol=1e-12)
    np.testing.assert_allclose(at_c.second / c**2, at_1.second, atol=1e-12)


def test_jvp_matches_central_difference():
    g = Grid((16, 16), (TWO_PI, 3.0))
    rng = np.random.default_rng(12)
    data = generic_data(g, rng, 5)
    cfg = generic_cfg(g, rng)
    du, dv = random_smooth_field(g, rng), random_smooth_field(g, rng)
    jv = eom_jvp(data, cfg, du, dv)
    errs = []
    for e in (1e-3, 1e-4):
        plus = eom_residual(data, Configuration(cfg.u + e * du, cfg.v + e * dv))
        minus = eom_residual(data, Configuration(cfg.u - e * du, cfg.v - e * dv))
        errs.append(max(np.max(np.abs((plus.first - minus.first) / (2 * e) - jv.first)), np.max(np.abs((plus.second - minus.second) / (2 * e) - jv.second))))
    # central differences converge at O(eps^2): a decade in eps buys two in error
    assert errs[1] < errs[0] / 50


# -- variational consistency -----------------------------------------------------------------------


@pytest.mark.parametrize("q", [3, 5, 7])
@pytest.mark.parametrize("which", ["u", "v", "uv"])
def test_variations_match_residual_pairing(q, which):
    g = Grid((32,), (TWO_PI,))
    rng = np.random.default_rng(100 + q)
    data = generic_data(g, rng, q)
    cfg = generic_cfg(g, rng)
    psi = random_smooth_field(g, rng, 0.5)
    errs = variational_errors(data, cfg, psi if "u" in which else None, psi if "v" in which else None)
    assert variational_order(errs) >= 1.9


def test_variation_along_u_is_exact_because_potential_is_quadratic_in_u():
    g = Grid((32,), (TWO_PI,))
    rng = np.random.default_rng(3)
    data = generic_data(g, rng, 7)
    cfg = generic_cfg(g, rng)
    errs = variational_errors(data, cfg, random_smooth_field(g, rng, 0.5), None)
    assert np.all(errs < 1e-9)


# -- mass --------------------------------------------------------------------------------------------


def test_mass_zero_at_balance_point():
    g = Grid((64,), (TWO_PI,))
    assert abs(mass_squared(balance_data(g), Configuration.constant(g, 1.0, 1.0))) < 1e-10


def test_mass_single_beta_term():
    g = Grid((16,), (1.0,))
    mass = mass_squared(balance_data(g, beta=-0.1), Configuration.constant(g, 1.0, 1.0))
    assert mass == pytest.approx(0.6, rel=1e-14)


@pytest.mark.parametrize("seed", range(5))
def test_mass_second_difference_converges_quadratically(seed):
    # generic data with every flux degree switched on; the error is pure O(eps^2) truncation
    g = Grid((32,), (TWO_PI,))
    rng = np.random.default_rng(seed)
    data = generic_data(g, rng, (3, 5, 7)[seed % 3])
    cfg = generic_cfg(g, rng)
    m = mass_squared(data, cfg)
    errs = [abs(m - mass_second_difference(data, cfg, e)) for e in (1e-2, 1e-3)]
    assert np.log10(errs[0] / errs[1]) > 1.9


def test_mass_matches_second_difference_off_shell():
    g = Grid((32,), (TWO_PI,))
    rng = np.random.default_rng(21)
    data = generic_data(g, rng, 3).replace(flux_sq={p: generic_data(g, rng, 3).flux(p) for p in (1, 3, 5)})
    cfg = generic_cfg(g, rng)
    m = mass_squared(data, cfg)
    assert abs(m - mass_second_difference(data, cfg, 1e-4)) <= 1e-6 * abs(m)


def test_mass_terms_breakdown_keys():
    g = Grid((8,), (1.0,))
    terms = mass_terms(balance_data(g, alpha=0.1, beta=-0.2), Configuration.constant(g, 1.0, 1.0))
    assert set(terms) == {"curvature", "gradient_u", "flux", "string", "alpha", "beta"}
    assert terms["alpha"] == pytest.approx(-0.6)
    assert terms["beta"] == pytest.approx(1.2)


def test_mass_identity_rhs_examples():
    g = Grid((16,), (2.0,))
    one = Configuration.constant(g, 1.0, 1.0)
    assert mass_identity_rhs(balance_data(g), one) == 0.0
    data = balance_data(g).replace(R=g.constant(0.35))
    assert mass_identity_rhs(data, one) == pytest.approx(0.35 * 2.0)


def test_mass_identity_rhs_rejects_wrong_data():
    g = Grid((16,), (2.0,))
    one = Configuration.constant(g, 1.0, 1.0)
    with pytest.raises(ValidationError):
        mass_identity_rhs(q7_constant_data(g), one)
    bad = balance_data(g)
    bad = bad.replace(flux_sq={**bad.flux_sq, 2: g.constant(1.0)})
    with pytest.raises(ValidationError):
        mass_identity_rhs(bad, one)


def test_derived_constants():
    g = Grid((16,), (2.0,), extra_volume=1.5)
    newton_G, vol = derived_constants(g, Configuration.constant(g, 2.0, 0.5))
    assert vol == pytest.approx(3 * 0.125)
    assert newton_G == pytest.approx(1 / (3 * 2 * 0.125))


# -- non-perturbative term ------------------------------------------------------------------------------


def np_data(B, a, s):
    g = Grid((8,), (1.0,))
    z = g.constant(0.0)
    return ModelData(grid=g, q=3, alpha=0, beta=0, R=z, T_string=z, np_amplitude=B, np_rate=a, np_power=s)


def test_nonperturbative_constant():
    assert nonperturbative(np_data(1.0, 0.0, 0.0), 2.3) == (1.0, 0.0)


def test_nonperturbative_at_unit_modulus():
    B, a, s = 2.0, 0.3, 1.5
    value, curv = nonperturbative(np_data(B, a, s), 1.0)
    v = sp.symbols("v", positive=True)
    expr = B * sp.exp(-2 * a * v**4) / v**s
    assert value == pytest.approx(B * np.exp(-2 * a))
    assert curv == pytest.approx(float(sp.diff(expr, v, 2).subs(v, 1)), rel=1e-12)


def test_nonperturbative_curvature_matches_difference():
    data = np_data(1.3, 0.2, 2.0)
    v0 = 1.1
    errs = []
    for e in (1e-2, 1e-3):
        fd = (nonperturbative(data, v0 + e)[0] - 2 * nonperturbative(data, v0)[0] + nonperturbative(data, v0 - e)[0]) / e**2
        errs.append(abs(fd - nonperturbative(data, v0)[1]))
    assert errs[1] < errs[0] / 50


def test_nonperturbative_rejects_nonpositive_modulus():
    with pytest.raises(ValidationError):
        nonperturbative(np_data(1, 1, 1), 0.0)
