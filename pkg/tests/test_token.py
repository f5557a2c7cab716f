"""Local statistics, token payload updates, estimates, and whole episodes."""

import numpy as np
import pytest

from roamtoken import (
    AgentLocalState,
    AgentModel,
    AlphaSchedule,
    DeterministicSequence,
    GlobalModel,
    MissingTrace,
    OutDegreeReciprocal,
    StaticGraph,
    TokenPayload,
    estimate,
    local_update,
    run_episode,
    token_visit,
)
from roamtoken.token import write_trace_csv

from conftest import make_ref5_model, ref5_adjacency


def _scalar_agent(idx=0, h=1.0, c=1.0, dim=1):
    row = np.zeros(dim)
    row[0] = h
    return AgentModel(idx, [row], [[c]])


def test_alpha_schedule_forms():
    lin = AlphaSchedule.linear()
    assert lin.alpha(0) == 1.0
    assert lin.alpha(10) == 11.0
    pow_ = AlphaSchedule.power(2.0, 0.75)
    assert pow_.alpha(0) == 2.0
    assert pow_.alpha(3) == pytest.approx(2.0 * 4**0.75)
    with pytest.raises(ValueError):
        AlphaSchedule.power(1.0, 0.5)
    with pytest.raises(ValueError):
        AlphaSchedule.power(-1.0, 0.9)
    with pytest.raises(ValueError):
        AlphaSchedule("cubic")


def test_local_update_first_measurement():
    agent = AgentModel(0, [[2.0, 0.0]], [[4.0]])
    state = AgentLocalState.zeros(2)
    local_update(state, agent, np.array([3.0]))
    assert state.k == 1
    assert np.allclose(state.x, agent.W @ np.array([3.0]))


def test_local_update_matches_from_scratch_average():
    rng = np.random.default_rng(0)
    agent = AgentModel(0, rng.standard_normal((2, 3)), np.array([[2.0, 0.3], [0.3, 1.0]]))
    state = AgentLocalState.zeros(3)
    ys = rng.standard_normal((50, 2))
    for y in ys:
        local_update(state, agent, y)
    ref = agent.W @ ys.mean(axis=0)
    assert np.abs(state.x - ref).max() < 1e-12


def test_local_update_zero_noise_is_information_times_theta():
    model = make_ref5_model(noise="zero")
    agent = model.agents[2]
    state = AgentLocalState.zeros(2)
    y = agent.H @ model.theta
    for _ in range(7):
        local_update(state, agent, y)
    assert np.allclose(state.x, agent.B @ model.theta, atol=1e-12)


def test_token_visit_first_and_repeat():
    agent = _scalar_agent(0, h=1.0, c=1.0)
    payload = TokenPayload.initial(1, start_node=0)
    state = AgentLocalState.zeros(1)
    state.x = np.array([0.8])
    token_visit(payload, state, agent, t=0)
    assert np.allclose(payload.d, [0.8])
    assert np.allclose(payload.K, agent.B)
    assert payload.visited == {0}
    assert state.last_visit == 0
    # revisit with unchanged statistic leaves the payload unchanged
    token_visit(payload, state, agent, t=3)
    assert np.allclose(payload.d, [0.8])
    assert np.allclose(payload.K, agent.B)
    assert state.last_visit == 3


def test_token_visit_wrong_holder_rejected():
    agent = _scalar_agent(1)
    payload = TokenPayload.initial(1, start_node=0)
    with pytest.raises(ValueError, match="token is at node"):
        token_visit(payload, AgentLocalState.zeros(1), agent, 0)


def test_estimate_no_visits_is_zero():
    payload = TokenPayload.initial(3, start_node=0)
    s = estimate(payload, AlphaSchedule.linear(), t=5)
    assert np.array_equal(s, np.zeros(3))


def test_estimate_scalar_closed_form():
    # one scalar agent: s = (1/(t+1) + 1)^{-1} * running mean
    agent = _scalar_agent()
    payload = TokenPayload.initial(1, start_node=0)
    state = AgentLocalState.zeros(1)
    for y in (0.4, 1.2, -0.3):
        local_update(state, agent, np.array([y]))
    token_visit(payload, state, agent, t=2)
    mbar = (0.4 + 1.2 - 0.3) / 3
    for t in (2, 9, 99):
        s = estimate(payload, AlphaSchedule.linear(), t)
        assert s[0] == pytest.approx(mbar / (1.0 / (t + 1) + 1.0), rel=1e-12)


def test_estimate_matches_dense_solve_oracle():
    model = make_ref5_model(noise="zero")
    payload = TokenPayload.initial(2, start_node=0)
    payload.K = model.sigma_c.copy()
    payload.d = model.sigma_c @ model.theta
    payload.visited = set(range(5))
    for t in (0, 10, 1000):
        s = estimate(payload, AlphaSchedule.linear(), t)
        ref = np.linalg.solve(np.eye(2) / (t + 1) + model.sigma_c, model.sigma_c @ model.theta)
        assert np.abs(s - ref).max() < 1e-10


def test_single_agent_episode_matches_closed_form():
    agent = AgentModel(0, [[1.0]], [[1.0]])
    model = GlobalModel([agent], [2.0])
    spec = StaticGraph(np.zeros((1, 1), dtype=bool))
    trace = run_episode(
        model,
        spec,
        OutDegreeReciprocal(),
        AlphaSchedule.linear(),
        horizon=200,
        record={"token_sq_err", "last_seen", "estimates", "local_stats"},
        seed=5,
    )
    assert np.all(trace.holder == 0)
    # statistic is the exact running mean; estimate follows the scalar formula
    for t in (0, 3, 50, 200):
        mbar = trace.x_hist[t, 0, 0]
        expected = mbar / (1.0 / (t + 1) + 1.0)
        assert trace.estimates[t, 0] == pytest.approx(expected, rel=1e-12)


def test_zero_noise_error_shrinks_once_all_visited():
    model = make_ref5_model(noise="zero")
    spec = StaticGraph(ref5_adjacency())
    trace = run_episode(
        model, spec, OutDegreeReciprocal(), AlphaSchedule.linear(), horizon=400, seed=1
    )
    full = np.flatnonzero(trace.visited_count == 5)
    assert full.size > 0
    errs = np.sqrt(trace.token_sq_err[full])
    assert np.all(np.diff(errs) <= 1e-15)
    # matches the all-visited closed form exactly
    t_full = int(full[0]) + 50
    ref = np.linalg.solve(
        np.eye(2) / (t_full + 1) + model.sigma_c, model.sigma_c @ model.theta
    )
    expected_sq = float(((ref - model.theta) ** 2).sum())
    assert trace.token_sq_err[t_full] == pytest.approx(expected_sq, rel=1e-9)


def test_visited_set_monotone_and_start_counted(ref5_model, ref5_static, reciprocal, linear_alpha):
    trace = run_episode(ref5_model, ref5_static, reciprocal, linear_alpha, horizon=100, seed=3)
    assert trace.visited_count[0] == 1
    assert np.all(np.diff(trace.visited_count) >= 0)


def test_holder_tau_is_current_tick(ref5_model, ref5_static, reciprocal, linear_alpha):
    trace = run_episode(
        ref5_model, ref5_static, reciprocal, linear_alpha, horizon=60, record={"tau"}, seed=9
    )
    for t in range(61):
        holder = trace.holder[t]
        assert trace.tau[t, holder] == t
        others = [i for i in range(5) if i != holder]
        assert np.all(trace.tau[t, others] < t)


def test_incremental_payload_matches_from_scratch_sums(ref5_model, reciprocal, linear_alpha):
    # random 200-step episode on 6 nodes, recomputed from logged snapshots
    rng = np.random.default_rng(17)
    h = rng.standard_normal((6, 1, 3))
    agents = [AgentModel(i, h[i], [[1.0]]) for i in range(6)]
    model = GlobalModel(agents, [1.0, -0.5, 0.25])
    backbone = rng.random((6, 6)) < 0.5
    np.fill_diagonal(backbone, False)
    from roamtoken import IidFailureGraph

    spec = IidFailureGraph(backbone, p_fail=0.3)
    trace = run_episode(
        model,
        spec,
        reciprocal,
        linear_alpha,
        horizon=200,
        record={"payload", "local_stats", "tau"},
        seed=23,
    )
    b_stack = np.stack([a.B for a in agents])
    for t in range(201):
        seen = trace.tau[t] >= 0
        d_ref = trace.x_hist[trace.tau[t][seen], np.flatnonzero(seen)].sum(axis=0)
        k_ref = b_stack[seen].sum(axis=0)
        assert np.abs(trace.d_hist[t] - d_ref).max() < 1e-10
        assert np.abs(trace.K_hist[t] - k_ref).max() < 1e-10


def test_last_seen_metric_hand_check():
    # force the path 0 -> 1 -> 2 with single-edge frames and check the average
    frames = [
        np.array([[0, 1, 0], [0, 0, 0], [0, 0, 0]], dtype=bool),
        np.array([[0, 0, 0], [0, 0, 1], [0, 0, 0]], dtype=bool),
        np.array([[0, 0, 0], [0, 0, 0], [1, 0, 0]], dtype=bool),
    ]
    spec = DeterministicSequence(frames, cycle=True)
    h = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]
    model = GlobalModel([AgentModel(i, [h[i]], [[1.0]]) for i in range(3)], [1.0, 2.0])
    trace = run_episode(
        model,
        spec,
        OutDegreeReciprocal(),
        AlphaSchedule.linear(),
        horizon=2,
        record={"token_sq_err", "last_seen", "estimates"},
        seed=0,
    )
    assert list(trace.holder) == [0, 1, 2]
    theta = np.array([1.0, 2.0])
    e = [float(((trace.estimates[t] - theta) ** 2).sum()) for t in range(3)]
    assert trace.mean_last_seen_sq_err[0] == pytest.approx(e[0])
    assert trace.mean_last_seen_sq_err[1] == pytest.approx((e[0] + e[1]) / 2)
    assert trace.mean_last_seen_sq_err[2] == pytest.approx((e[0] + e[1] + e[2]) / 3)


def test_record_validation_and_trace_export(tmp_path, ref5_model, ref5_static, reciprocal, linear_alpha):
    with pytest.raises(ValueError, match="unknown record keys"):
        run_episode(
            ref5_model, ref5_static, reciprocal, linear_alpha, horizon=2, record={"bogus"}, seed=0
        )
    trace = run_episode(ref5_model, ref5_static, reciprocal, linear_alpha, horizon=5, seed=0)
    path = tmp_path / "trace.csv"
    write_trace_csv(trace, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "t,holder,visited_count,token_sq_err,mean_last_seen_sq_err"
    assert len(lines) == 7
    bare = run_episode(
        ref5_model, ref5_static, reciprocal, linear_alpha, horizon=5, record={"tau"}, seed=0
    )
    with pytest.raises(MissingTrace):
        write_trace_csv(bare, tmp_path / "bare.csv")


def test_episode_requires_matching_sizes(ref5_model, reciprocal, linear_alpha):
    small = StaticGraph(np.zeros((3, 3), dtype=bool))
    with pytest.raises(ValueError, match="nodes"):
        run_episode(ref5_model, small, reciprocal, linear_alpha, horizon=2, seed=0)
