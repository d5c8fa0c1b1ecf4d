import logging

import numpy as np
import orjson
import pytest

from netgame.config import SolverSettings
from netgame.errors import NumericError
from netgame.logging_config import JsonFormatter
from netgame.models.schemas import BestResponseCurve, Player, SweepRow
from netgame.utils.csv_export import write_curve, write_sweep
from netgame.utils.env import get_int_from_env
from netgame.utils.linalg import (
    is_pd,
    is_psd,
    kron_operator,
    pbh_observable,
    pbh_stabilizable,
    psd_sqrt,
    sym_permutation,
    weight_inverse,
)
from netgame.workers.pool import run_parallel, thread_count


def test_psd_helpers():
    assert is_psd(np.diag([1.0, 0.0]))
    assert not is_pd(np.diag([1.0, 0.0]))
    assert not is_psd(np.diag([1.0, -1e-3]))
    root = psd_sqrt(np.array([[4.0, 0.0], [0.0, 9.0]]))
    assert np.allclose(root, np.diag([2.0, 3.0]))
    with pytest.raises(NumericError):
        psd_sqrt(np.diag([1.0, -1.0]))


def test_pbh_tests():
    A = np.diag([1.0, -1.0])
    assert pbh_stabilizable(A, np.array([[1.0], [0.0]]))
    assert not pbh_stabilizable(A, np.array([[0.0], [1.0]]))
    assert pbh_observable(A, np.array([[1.0, 1.0]]))
    assert not pbh_observable(A, np.array([[0.0, 1.0]]))


def test_weight_inverse():
    B = np.array([[1.0], [2.0]])
    assert np.allclose(weight_inverse(B, np.array([[2.0]])), B @ B.T / 2.0)


def test_kron_operator_is_row_major(rng):
    mats = rng.standard_normal((3, 2, 2))
    X = rng.standard_normal((2, 2))
    expected = sum(M @ X @ M.T for M in mats)
    assert np.allclose((kron_operator(mats) @ X.reshape(-1)).reshape(2, 2), expected)


def test_sym_permutation_transposes():
    X = np.arange(9.0).reshape(3, 3)
    assert np.array_equal(X.reshape(-1)[sym_permutation(3)].reshape(3, 3), X.T)


def test_int_from_env(monkeypatch):
    log = logging.getLogger("test")
    monkeypatch.setenv("NETGAME_TEST_INT", "7")
    assert get_int_from_env(["NETGAME_TEST_INT"], default=1, logger=log) == 7
    monkeypatch.setenv("NETGAME_TEST_INT", "seven")
    assert get_int_from_env(["NETGAME_TEST_INT"], default=1, logger=log) == 1
    monkeypatch.setenv("NETGAME_TEST_INT", "0")
    assert get_int_from_env(["NETGAME_TEST_INT"], default=3, min_value=1, logger=log) == 3


def test_thread_cap(monkeypatch):
    monkeypatch.setenv("NETGAME_THREADS", "3")
    assert thread_count() == 3
    assert thread_count(5) == 5


def test_run_parallel_keeps_order():
    items = list(range(20))
    assert run_parallel(lambda x: x * x, items, threads=4) == [x * x for x in items]
    assert run_parallel(lambda x: x + 1, items, threads=1) == [x + 1 for x in items]


def test_json_formatter_merges_bound_context(monkeypatch):
    monkeypatch.setenv("ENV", "production")
    record = logging.LogRecord("netgame.test", logging.INFO, __file__, 1, "rho=%s", (0.5,), None)
    record.agent_name = "covariance_service"
    record.Sigma = np.eye(2)
    payload = orjson.loads(JsonFormatter().format(record))
    assert payload["message"] == "rho=0.5"
    assert payload["agent_name"] == "covariance_service"
    assert payload["Sigma"] == [[1.0, 0.0], [0.0, 1.0]]
    assert "timestamp" in payload and "lineno" not in payload

    monkeypatch.setenv("ENV", "dev")
    assert set(orjson.loads(JsonFormatter().format(record))) == {"level", "message", "agent_name", "Sigma"}


def test_csv_writers(tmp_path):
    curve = BestResponseCurve(player=Player.P1, grid=[0.0, 0.5], responses=[0.25, float("nan")])
    text = write_curve(tmp_path / "c.csv", curve).read_text()
    assert text == "opponent,response\n0.0,0.25\n0.5,nan\n"

    row = SweepRow(lambda11=25.0, lambda22=15.0, p_star=0.4, q_star=0.5, converged=True, iterations=12)
    lines = write_sweep(tmp_path / "s.csv", [row]).read_text().splitlines()
    assert lines == ["lambda11,lambda22,p_star,q_star,converged,iterations", "25.0,15.0,0.4,0.5,1,12"]


def test_settings_defaults_and_env_override(monkeypatch):
    defaults = SolverSettings()
    assert defaults.tp == 400
    assert defaults.eta1 == defaults.eta2 == defaults.eps == defaults.kappa == 1e-4
    assert defaults.imag_axis_tol == 1e-6
    monkeypatch.setenv("NETGAME_TP", "50")
    assert SolverSettings().tp == 50
