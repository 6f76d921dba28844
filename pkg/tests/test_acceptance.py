"""Tests for the acceptance suite plumbing and its cheaper checks."""

from __future__ import annotations

import io
from unittest.mock import patch

import numpy as np
import pytest
from rich.console import Console

from akpz_lab.core.acceptance import QUICK, AcceptanceSuite, CheckResult, _epsilon, lozenge_hessian
from akpz_lab.core.dimer_lattice import HONEYCOMB, random_liquid_slopes
from akpz_lab.core.evolution import convergence_study
from akpz_lab.core.runner import ParallelRunner
from akpz_lab.core.surface_tension import sigma_hessian_dual
from akpz_lab.exceptions import CrossingError
from tests import oracles


@pytest.fixture
def suite() -> AcceptanceSuite:
    runner = ParallelRunner(workers=2, console=Console(file=io.StringIO()))
    return AcceptanceSuite(runner=runner, quick=True)


def test_lozenge_hessian_is_vectorised():
    """The batch formula agrees with the scalar oracle and the dual route."""
    rho = random_liquid_slopes(HONEYCOMB, 10, seed=5)
    batch = lozenge_hessian(rho)
    assert batch.shape == (10, 2, 2)
    assert np.allclose(batch[3], oracles.lozenge_hessian(*rho[3]))
    assert np.allclose(batch, sigma_hessian_dual(HONEYCOMB, rho), rtol=1e-8)


def test_epsilon_uses_the_coarse_constant():
    """eps = 10 C dx^2 at the fine spacing, C from the coarse grid, whichever way it is asked for."""
    report = convergence_study([0.1, 0.05], [4e-2, 2e-2])
    assert report.constant == pytest.approx(4.0)
    assert _epsilon(report) == pytest.approx(10 * 4.0 * 0.05**2)
    assert report.tolerance(0.05) == pytest.approx(_epsilon(report))


def test_suite_lists_nine_checks(suite: AcceptanceSuite):
    """Check names come out in a fixed order."""
    names = [name for name, _ in suite.checks]
    assert names == [
        "bijection",
        "convexity",
        "identities",
        "el-burgers",
        "preservation",
        "probe",
        "falsifier",
        "akpz-signature",
        "consistency",
    ]
    assert suite.sizes is QUICK


def test_run_turns_errors_into_failures(suite: AcceptanceSuite):
    """A check raising a package error is reported as FAIL with its details."""

    def crossing() -> CheckResult:
        raise CrossingError("lines cross", t=0.5)

    def fine() -> CheckResult:
        return CheckResult("fine", True, "ok")

    with patch.object(AcceptanceSuite, "checks", [("crossing", crossing), ("fine", fine)]):
        results = suite.run()
    assert [r.passed for r in results] == [False, True]
    assert results[0].detail.startswith("CrossingError")
    assert results[0].metrics == {"t": 0.5}
    assert all(r.seconds >= 0 for r in results)


def test_check_bijection(suite: AcceptanceSuite):
    """z(rho) and rho(z) invert each other on both models."""
    result = suite.check_bijection()
    assert result.passed, result.detail
    assert result.metrics["anchors"] < 1e-12


def test_check_identities(suite: AcceptanceSuite):
    """Both complex identities hold on random liquid slopes."""
    result = suite.check_identities()
    assert result.passed, result.detail


def test_burgers_shape_is_cached(suite: AcceptanceSuite):
    """Shapes are built once per grid size."""
    first = suite.burgers_shape(9)
    assert suite.burgers_shape(9) is first
    assert first[0].complete


@pytest.mark.slow
def test_check_el_burgers_converges(suite: AcceptanceSuite):
    """The EL residual of the Burgers shape shrinks under refinement."""
    result = suite.check_el_burgers()
    errors = result.metrics["errors"]
    assert errors[1] < errors[0] / 3


def test_check_convexity(suite: AcceptanceSuite):
    """Dual and Legendre Hessians are positive definite and match the lozenge formula."""
    result = suite.check_convexity()
    assert result.passed, result.detail
    assert result.metrics["min_eigenvalue"] > 0


def test_check_akpz_signature(suite: AcceptanceSuite):
    """Harmonic speeds have no isotropic cells; the bowl and saddle controls classify as expected."""
    result = suite.check_akpz_signature()
    assert result.passed, result.detail
    assert result.metrics == {"isotropic": 0, "controls": True}


@pytest.mark.slow
def test_harmonic_checks_share_one_run(suite: AcceptanceSuite):
    """Preservation, rate and falsifier checks run off the cached Im z evolution."""
    preservation = suite.check_preservation()
    assert preservation.metrics["T"] > 0
    assert np.isfinite(preservation.metrics["max_el"])
    assert np.isfinite(preservation.metrics["max_delta"])
    assert set(suite._harmonic) == set(QUICK.grids)

    rates = suite.check_probe()
    assert rates.metrics["rate_agreement"] < 0.1
    assert np.isfinite(rates.metrics["r_probe"])

    falsifier = suite.check_falsifier()
    assert falsifier.metrics["factor"] > 1.0
    assert falsifier.metrics["max_delta_T"] > 0


@pytest.mark.slow
def test_check_consistency(suite: AcceptanceSuite):
    """The viscous and characteristic solutions draw together as the grid is refined."""
    result = suite.check_consistency()
    contractions = result.metrics["contractions"]
    assert set(contractions) == {"im-z", "re-z2"}
    assert all(c > 1.0 for c in contractions.values())
