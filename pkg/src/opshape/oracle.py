"""Exact certification of optimal-policy preservation on small MDPs.

History-dependent intrinsic rewards and episode ledgers make the shaped
reward non-Markovian in the environment state. The oracle restores the Markov
property by augmenting each state with a digest of everything the reward
generator and shaper remember, then runs exact backward induction over the
resulting DAG of (state, time, digest) nodes.
"""
from __future__ import annotations

import copy
import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from .intrinsic import IMConfig, build_im
from .mdp import (DEFAULT_TIE_TOLERANCE, Mdp, argmax_set, check_policy, optimal_action_set,
                  policy_evaluation, value_iteration)
from .shaping import (AdopsInputs, ShaperConfig, ShapingEvent, adops_f2, make_shaper)

DEFAULT_CAP = 1_000_000
ENUMERATION_CAP = 1_000_000


class OracleError(ValueError):
    pass


class CapExceeded(OracleError):
    def __init__(self, required: int, cap: int):
        super().__init__(f"augmented state space needs more than {cap} nodes (reached {required})")
        self.required = required
        self.cap = cap


# --------------------------------------------------------------------------
# augmented MDP
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AugEdge:
    prob: float
    r_ext: float
    f_raw: float
    f_shaped: float
    s_next: int
    next: int | None  # None when the step ends the episode


@dataclass
class AugmentedMdp:
    """Episode-level DAG over (state, time, IM digest, shaper digest) nodes.

    ``edges[node][a]`` lists the possible outcomes of action ``a``. Nodes are
    stored in nondecreasing ``t`` order, so iterating backwards is a valid
    order for backward induction.
    """

    base: Mdp
    gamma_i: float
    node_s: list[int]
    node_t: list[int]
    node_key: list[tuple]
    edges: list[list[list[AugEdge]]]
    roots: list[tuple[int, float]]

    @property
    def num_nodes(self) -> int:
        return len(self.node_s)

    def nodes_at(self, s: int, t: int) -> list[int]:
        return [n for n in range(self.num_nodes) if self.node_s[n] == s and self.node_t[n] == t]

    def map_shaped(self, fn) -> "AugmentedMdp":
        """Copy with ``f_shaped = fn(node, a, edge)`` on every edge."""
        edges = [[[replace(e, f_shaped=float(fn(n, a, e))) for e in out] for a, out in enumerate(acts)]
                 for n, acts in enumerate(self.edges)]
        return replace(self, edges=edges)


def _value_fed(kind: str) -> bool:
    return kind in ("adops", "adops_ideal", "adopes")


def build_augmented(mdp: Mdp, im_config: IMConfig | None, shaper_config: ShaperConfig,
                    cap: int = DEFAULT_CAP) -> AugmentedMdp:
    """Enumerate every node reachable within one episode from a fresh run.

    Value-fed shapers (the ADOPS family) are built with ``f_shaped = f_raw``;
    use :func:`ideal_adops` or :func:`practical_adops` to fill them in.
    """
    im_config = im_config or IMConfig(kind="none")
    build_cfg = replace(shaper_config, kind="raw") if _value_fed(shaper_config.kind) else shaper_config
    N, S, A = mdp.shape
    index: dict[tuple, int] = {}
    node_s, node_t, node_key, states = [], [], [], []

    def intern(s, t, im, shaper) -> int:
        key = (s, t, im.digest(), shaper.digest())
        if key not in index:
            if len(node_s) >= cap:
                raise CapExceeded(len(node_s) + 1, cap)
            index[key] = len(node_s)
            node_s.append(s)
            node_t.append(t)
            node_key.append(key)
            states.append((im, shaper))
        return index[key]

    roots = []
    for s in np.flatnonzero(mdp.start > 0):
        n = intern(int(s), 0, build_im(im_config, mdp), make_shaper(build_cfg))
        roots.append((n, float(mdp.start[s])))

    edges: list[list[list[AugEdge]]] = []
    done_nodes = 0
    while done_nodes < len(node_s):
        n = done_nodes
        done_nodes += 1
        s, t = node_s[n], node_t[n]
        im0, shaper0 = states[n]
        acts = []
        for a in range(A):
            out = []
            for s2 in np.flatnonzero(mdp.transition[s, a] > 0):
                s2 = int(s2)
                im, shaper = copy.deepcopy(im0), copy.deepcopy(shaper0)
                f = im.bonus(s2)
                done = t == N - 1 or s2 in mdp.terminal_states
                fs = shaper.step(ShapingEvent(t, s, a, s2, f, done))
                nxt = None if done else intern(s2, t + 1, im, shaper)
                out.append(AugEdge(float(mdp.transition[s, a, s2]), float(mdp.reward[t, s, a, s2]),
                                   float(f), float(fs), s2, nxt))
            acts.append(out)
        edges.append(acts)
        states[n] = None  # the generator state is no longer needed
    return AugmentedMdp(mdp, shaper_config.gamma_i, node_s, node_t, node_key, edges, roots)


def _expect(edges: list[AugEdge], fn) -> float:
    return sum(e.prob * fn(e) for e in edges)


def _node_values(aug: AugmentedMdp, values, e: AugEdge) -> float:
    return 0.0 if e.next is None else values[e.next]


@dataclass
class AugValues:
    """Results of backward induction over an augmented MDP."""

    v_e: np.ndarray
    v_i: np.ndarray
    q_e: np.ndarray
    q_i: np.ndarray

    @property
    def q_ie(self) -> np.ndarray:
        return self.q_e + self.q_i

    @property
    def v_ie(self) -> np.ndarray:
        return self.v_e + self.v_i


def solve_augmented(aug: AugmentedMdp, tie_tolerance: float = DEFAULT_TIE_TOLERANCE,
                    policy: np.ndarray | None = None, shaped: bool = True) -> AugValues:
    """Backward induction with separate extrinsic and intrinsic discounts.

    Without ``policy`` each node follows the action maximizing
    ``Q_E + Q_I``; ties within ``tie_tolerance`` go to the higher ``Q_E``,
    then to the lowest index. With a (N, S, A) ``policy`` the values are
    that policy's. ``shaped=False`` uses the raw intrinsic reward.
    """
    base = aug.base
    A, n_nodes = base.num_actions, aug.num_nodes
    ge, gi = base.gamma_e, aug.gamma_i
    v_e, v_i = np.zeros(n_nodes), np.zeros(n_nodes)
    q_e, q_i = np.zeros((n_nodes, A)), np.zeros((n_nodes, A))
    for n in range(n_nodes - 1, -1, -1):
        for a in range(A):
            out = aug.edges[n][a]
            q_e[n, a] = _expect(out, lambda e: e.r_ext + ge * _node_values(aug, v_e, e))
            q_i[n, a] = _expect(out, lambda e: (e.f_shaped if shaped else e.f_raw)
                                + gi * _node_values(aug, v_i, e))
        if policy is None:
            a = _combined_choice(q_e[n], q_i[n], tie_tolerance)
            v_e[n], v_i[n] = q_e[n, a], q_i[n, a]
        else:
            pi = policy[aug.node_t[n], aug.node_s[n]]
            v_e[n], v_i[n] = float(pi @ q_e[n]), float(pi @ q_i[n])
    return AugValues(v_e, v_i, q_e, q_i)


def _combined_choice(qe: np.ndarray, qi: np.ndarray, tol: float) -> int:
    ties = argmax_set(qe + qi, tol)
    return max(sorted(ties), key=lambda a: (qe[a], -a))


def optimal_policy_set_bruteforce(target: Mdp | AugmentedMdp,
                                  tie_tolerance: float = DEFAULT_TIE_TOLERANCE):
    """Optimal action sets by exact backward induction.

    For a plain :class:`Mdp` this is the (t, s)-indexed extrinsic optimal
    set; for an :class:`AugmentedMdp` it is a list with one set per node,
    optimizing extrinsic plus shaped intrinsic return.
    """
    if isinstance(target, Mdp):
        return optimal_action_set(value_iteration(target)[1], tie_tolerance)
    vals = solve_augmented(target, tie_tolerance)
    return [argmax_set(row, tie_tolerance) for row in vals.q_ie]


def enumerate_optimal_sets(aug: AugmentedMdp, tie_tolerance: float = DEFAULT_TIE_TOLERANCE,
                           cap: int = ENUMERATION_CAP) -> list[frozenset[int]]:
    """Per-node optimal sets by scoring every deterministic node policy.

    A policy's score at a node is its combined return
    ``sum_k gamma_e**k r_k + gamma_i**k f'_k`` from that node; an action is
    optimal at a node if some best-scoring policy takes it there.
    """
    A, n_nodes = aug.base.num_actions, aug.num_nodes
    total = A ** n_nodes
    if total > cap:
        raise OracleError(f"{total} deterministic policies exceed the enumeration cap {cap}")
    ge, gi = aug.base.gamma_e, aug.gamma_i
    best = np.full((n_nodes, A), -np.inf)
    for choice in itertools.product(range(A), repeat=n_nodes):
        ve, vi = np.zeros(n_nodes), np.zeros(n_nodes)
        for n in range(n_nodes - 1, -1, -1):
            out = aug.edges[n][choice[n]]
            ve[n] = _expect(out, lambda e: e.r_ext + ge * _node_values(aug, ve, e))
            vi[n] = _expect(out, lambda e: e.f_shaped + gi * _node_values(aug, vi, e))
        for n in range(n_nodes):
            a = choice[n]
            best[n, a] = max(best[n, a], ve[n] + vi[n])
    return [argmax_set(row, tie_tolerance) for row in best]


# --------------------------------------------------------------------------
# ADOPS value feeds
# --------------------------------------------------------------------------

def compute_v_star_i_nodes(aug: AugmentedMdp, tie_tolerance: float = DEFAULT_TIE_TOLERANCE) -> np.ndarray:
    """Best raw intrinsic return among extrinsically optimal behaviours, per node."""
    base = aug.base
    opt = optimal_action_set(value_iteration(base)[1], tie_tolerance)
    gi = aug.gamma_i
    v = np.zeros(aug.num_nodes)
    for n in range(aug.num_nodes - 1, -1, -1):
        allowed = opt[aug.node_t[n], aug.node_s[n]]
        v[n] = max(_expect(aug.edges[n][a], lambda e: e.f_raw + gi * _node_values(aug, v, e))
                   for a in allowed)
    return v


def _project(aug: AugmentedMdp, node_values: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
    """(N+1, S) table from node values: weighted average per (t, s), 0 if unreached."""
    N, S = aug.base.horizon, aug.base.num_states
    num, den = np.zeros((N + 1, S)), np.zeros((N + 1, S))
    cnt, plain = np.zeros((N + 1, S)), np.zeros((N + 1, S))
    for n in range(aug.num_nodes):
        t, s = aug.node_t[n], aug.node_s[n]
        w = 0.0 if weights is None else weights[n]
        num[t, s] += w * node_values[n]
        den[t, s] += w
        plain[t, s] += node_values[n]
        cnt[t, s] += 1
    out = np.zeros((N + 1, S))
    have_w = den > 0
    out[have_w] = num[have_w] / den[have_w]
    fallback = ~have_w & (cnt > 0)
    out[fallback] = plain[fallback] / cnt[fallback]
    return out


def compute_v_star_i(mdp: Mdp, im_config: IMConfig | None, gamma_i: float = 0.99,
                     tie_tolerance: float = DEFAULT_TIE_TOLERANCE, cap: int = DEFAULT_CAP) -> np.ndarray:
    """V*_I as an (N+1, S) table.

    Where several history digests share a (t, s), the table holds their
    maximum; unreachable entries are 0. Use :func:`compute_v_star_i_nodes`
    for the per-node values.
    """
    aug = build_augmented(mdp, im_config, ShaperConfig(kind="raw", gamma_i=gamma_i), cap)
    v = compute_v_star_i_nodes(aug, tie_tolerance)
    N, S = mdp.horizon, mdp.num_states
    out = np.full((N + 1, S), -np.inf)
    for n in range(aug.num_nodes):
        t, s = aug.node_t[n], aug.node_s[n]
        out[t, s] = max(out[t, s], v[n])
    out[np.isinf(out)] = 0.0
    return out


def _with_f2(aug: AugmentedMdp, v_e: np.ndarray, q_e: np.ndarray, v_i: np.ndarray,
             epsilon: float, zeta: float = 1.0, snap: float | None = None) -> AugmentedMdp:
    def shaped(n, a, e):
        t, s = aug.node_t[n], aug.node_s[n]
        ve, qe = float(v_e[t, s]), float(q_e[t, s, a])
        if snap is not None and abs(qe - ve) <= snap:
            qe = ve
        vin = 0.0 if e.next is None else float(v_i[e.next])
        f2 = adops_f2(AdopsInputs(ve, qe, float(v_i[n]), vin, aug.gamma_i, e.f_raw, epsilon))
        return e.f_raw + zeta * f2
    return aug.map_shaped(shaped)


def ideal_adops(aug: AugmentedMdp, epsilon: float = 1e-7, zeta: float = 1.0,
                tie_tolerance: float = DEFAULT_TIE_TOLERANCE) -> AugmentedMdp:
    """Fill in ADOPS rewards fed with V*_E, Q*_E and V*_I.

    ``Q*_E`` values within ``tie_tolerance`` of ``V*_E`` count as optimal, so
    solver round-off cannot demote a tied optimal action.
    """
    v_star, q_star = value_iteration(aug.base)
    v_i = compute_v_star_i_nodes(aug, tie_tolerance)
    return _with_f2(aug, v_star, q_star, v_i, epsilon, zeta, snap=tie_tolerance)


def reach_probabilities(aug: AugmentedMdp, policy: np.ndarray) -> np.ndarray:
    reach = np.zeros(aug.num_nodes)
    for n, p in aug.roots:
        reach[n] += p
    for n in range(aug.num_nodes):
        pi = policy[aug.node_t[n], aug.node_s[n]]
        for a in range(aug.base.num_actions):
            for e in aug.edges[n][a]:
                if e.next is not None:
                    reach[e.next] += reach[n] * pi[a] * e.prob
    return reach


@dataclass
class ExactCritic:
    """Exact values of a fixed policy for practical ADOPS.

    ``v_e``/``q_e`` are (t, s)-indexed extrinsic values; ``v_i_nodes`` is the
    raw-intrinsic value per augmented node and ``v_i`` its reach-weighted
    (t, s) projection.
    """

    v_e: np.ndarray
    q_e: np.ndarray
    v_i_nodes: np.ndarray
    v_i: np.ndarray
    aug: AugmentedMdp


def exact_critic(mdp: Mdp, policy: np.ndarray, im_config: IMConfig | None,
                 shaper_config: ShaperConfig, cap: int = DEFAULT_CAP) -> ExactCritic:
    policy = check_policy(mdp, policy)
    v_e, q_e = policy_evaluation(mdp, policy)
    aug = build_augmented(mdp, im_config, replace(shaper_config, kind="raw"), cap)
    v_i_nodes = solve_augmented(aug, policy=policy, shaped=False).v_i
    v_i = _project(aug, v_i_nodes, reach_probabilities(aug, policy))
    return ExactCritic(v_e, q_e, v_i_nodes, v_i, aug)


def practical_adops(critic: ExactCritic, epsilon: float = 1e-7, zeta: float = 1.0) -> AugmentedMdp:
    """ADOPS rewards fed with a fixed policy's exact critic values."""
    return _with_f2(critic.aug, critic.v_e, critic.q_e, critic.v_i_nodes, epsilon, zeta)


@dataclass
class PolicyQ:
    """One-step combined values of a fixed policy under practical ADOPS.

    ``q_ie[n, a]`` expands one step with the shaped reward and then follows
    the policy (extrinsic value at ``s'`` plus raw-intrinsic value at the
    successor node); ``v_ie[n] = V_E(s, t) + V_I(n)``.
    """

    aug: AugmentedMdp
    q_e: np.ndarray
    v_e: np.ndarray
    q_ie: np.ndarray
    v_ie: np.ndarray


def practical_adops_q(mdp: Mdp, policy: np.ndarray, im_config: IMConfig | None,
                      shaper_config: ShaperConfig, cap: int = DEFAULT_CAP) -> PolicyQ:
    critic = exact_critic(mdp, policy, im_config, shaper_config, cap)
    zeta = 1.0 if shaper_config.kind != "adopes" else (shaper_config.zeta if shaper_config.zeta is not None else 0.0)
    aug = practical_adops(critic, shaper_config.epsilon, zeta)
    ge, gi = mdp.gamma_e, aug.gamma_i
    n_nodes, A = aug.num_nodes, mdp.num_actions
    q_e, v_e = np.zeros((n_nodes, A)), np.zeros(n_nodes)
    q_ie, v_ie = np.zeros((n_nodes, A)), np.zeros(n_nodes)
    for n in range(n_nodes):
        t, s = aug.node_t[n], aug.node_s[n]
        v_e[n] = critic.v_e[t, s]
        v_ie[n] = critic.v_e[t, s] + critic.v_i_nodes[n]
        for a in range(A):
            q_e[n, a] = critic.q_e[t, s, a]
            q_ie[n, a] = _expect(aug.edges[n][a], lambda e: e.r_ext + e.f_shaped
                                 + ge * critic.v_e[t + 1, e.s_next]
                                 + gi * _node_values(aug, critic.v_i_nodes, e))
    return PolicyQ(aug, q_e, v_e, q_ie, v_ie)


def shaped_problem(mdp: Mdp, im_config: IMConfig | None, shaper_config: ShaperConfig,
                   tie_tolerance: float = DEFAULT_TIE_TOLERANCE, cap: int = DEFAULT_CAP) -> AugmentedMdp:
    """The augmented MDP whose ``f_shaped`` is the shaper's reward.

    ADOPS-family shapers have no policy here, so they are fed optimal values
    (the ideal form); ADOPES scales the correction by ``shaper_config.zeta``
    (default 0, its starting coefficient). PIES uses ``zeta`` (default 1).
    """
    aug = build_augmented(mdp, im_config, shaper_config, cap)
    kind = shaper_config.kind
    if kind in ("adops", "adops_ideal"):
        return ideal_adops(aug, shaper_config.epsilon, 1.0, tie_tolerance)
    if kind == "adopes":
        zeta = 0.0 if shaper_config.zeta is None else shaper_config.zeta
        return ideal_adops(aug, shaper_config.epsilon, zeta, tie_tolerance)
    return aug


# --------------------------------------------------------------------------
# preservation report
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ReportRow:
    s: int
    t: int
    node: int
    baseline: frozenset[int]
    shaped: frozenset[int]

    @property
    def match(self) -> bool:
        return self.baseline == self.shaped


@dataclass(frozen=True)
class Violation:
    s: int
    t: int
    action: int
    gap: float  # Q_IE(a) - V_IE at the node


@dataclass
class OptimalityReport:
    rows: list[ReportRow]
    violations: list[Violation]
    equal_value_violations: list[tuple[int, int, float]] = field(default_factory=list)
    strict_gap_violations: list[Violation] = field(default_factory=list)
    enumeration_checked: bool = False
    enumeration_agrees: bool | None = None

    @property
    def verdict(self) -> str:
        return "preserved" if not self.violations else "violated"

    def to_dict(self, mdp: Mdp | None = None) -> dict:
        sname = (lambda s: mdp.state_names[s]) if mdp is not None and mdp.state_names else (lambda s: s)
        aname = (lambda a: mdp.action_names[a]) if mdp is not None and mdp.action_names else (lambda a: a)
        return {
            "verdict": self.verdict,
            "enumeration_checked": self.enumeration_checked,
            "enumeration_agrees": self.enumeration_agrees,
            "rows": [{"s": sname(r.s), "t": r.t, "node": r.node,
                      "baseline": sorted(aname(a) for a in r.baseline),
                      "shaped": sorted(aname(a) for a in r.shaped), "match": r.match} for r in self.rows],
            "violations": [{"s": sname(v.s), "t": v.t, "action": aname(v.action), "gap": v.gap}
                           for v in self.violations],
            "equal_value_violations": [{"s": sname(s), "t": t, "spread": d}
                                       for s, t, d in self.equal_value_violations],
            "strict_gap_violations": [{"s": sname(v.s), "t": v.t, "action": aname(v.action), "gap": v.gap}
                                      for v in self.strict_gap_violations],
        }


def check_optimality_preserved(mdp: Mdp, im_config: IMConfig | None, shaper_config: ShaperConfig,
                               tie_tolerance: float = DEFAULT_TIE_TOLERANCE, cap: int = DEFAULT_CAP,
                               enumerate_policies: bool = True) -> OptimalityReport:
    """Compare extrinsic and shaped optimal action sets at every reachable node.

    Also checks that all extrinsically optimal actions share the shaped
    optimal value (within 1e-9) and that every extrinsically suboptimal
    action falls strictly below it. When the node count permits and the two
    discounts agree, the shaped sets are recomputed by enumerating every
    deterministic policy and compared.
    """
    aug = shaped_problem(mdp, im_config, shaper_config, tie_tolerance, cap)
    base_sets = optimal_action_set(value_iteration(mdp)[1], tie_tolerance)
    vals = solve_augmented(aug, tie_tolerance)
    q_ie = vals.q_ie
    shaped_sets = [argmax_set(row, tie_tolerance) for row in q_ie]
    rows, violations, eq_viol, gap_viol = [], [], [], []
    for n in range(aug.num_nodes):
        s, t = aug.node_s[n], aug.node_t[n]
        base, shaped = base_sets[t, s], shaped_sets[n]
        rows.append(ReportRow(s, t, n, base, shaped))
        v_ie = float(q_ie[n].max())
        for a in sorted(base ^ shaped):
            violations.append(Violation(s, t, a, float(q_ie[n, a] - v_ie)))
        opt_q = [q_ie[n, a] for a in base]
        spread = float(max(opt_q) - min(opt_q))
        if spread > 1e-9:
            eq_viol.append((s, t, spread))
        top = max(opt_q)
        for a in range(mdp.num_actions):
            if a not in base and not q_ie[n, a] < top:
                gap_viol.append(Violation(s, t, a, float(q_ie[n, a] - top)))
    report = OptimalityReport(rows, violations, eq_viol, gap_viol)
    if enumerate_policies and mdp.gamma_e == aug.gamma_i and mdp.num_actions ** aug.num_nodes <= ENUMERATION_CAP:
        enum_sets = enumerate_optimal_sets(aug, tie_tolerance)
        report.enumeration_checked = True
        report.enumeration_agrees = enum_sets == shaped_sets
    return report


def is_unstable(mdp: Mdp, im_config: IMConfig | None, shaper_config: ShaperConfig,
                policy: np.ndarray, s: int, a_n: int, a_m: int, t: int = 0,
                cap: int = DEFAULT_CAP) -> bool:
    """Whether the one-action perturbations of ``policy`` at (s, t) are unstable.

    ``pi_n`` and ``pi_m`` agree with ``policy`` except that they take ``a_n``
    and ``a_m`` at (s, t). The pair is unstable when, under ``pi_m``, action
    ``a_n`` is strictly below the state value while, under ``pi_n``, action
    ``a_m`` is at least the state value. Values are exact, with the shaper's
    critic inputs taken from the perturbed policy being evaluated.
    """
    if a_n == a_m:
        return False
    policy = check_policy(mdp, policy)

    def perturbed(a):
        p = np.array(policy, dtype=np.float64)
        p[t, s] = 0.0
        p[t, s, a] = 1.0
        return p

    def at(pi, a):
        q = policy_q(mdp, pi, im_config, shaper_config, cap)
        nodes = q.aug.nodes_at(s, t)
        if not nodes:
            raise OracleError(f"(s={s}, t={t}) is unreachable")
        w = reach_probabilities(q.aug, pi)[nodes]
        w = w / w.sum() if w.sum() > 0 else np.full(len(nodes), 1.0 / len(nodes))
        return float(w @ q.q_ie[nodes, a]), float(w @ q.v_ie[nodes])

    pi_n, pi_m = perturbed(a_n), perturbed(a_m)
    q_m, v_m = at(pi_m, a_n)
    q_n, v_n = at(pi_n, a_m)
    return q_m < v_m and q_n >= v_n


def policy_q(mdp: Mdp, policy: np.ndarray, im_config: IMConfig | None, shaper_config: ShaperConfig,
             cap: int = DEFAULT_CAP) -> PolicyQ:
    """Exact one-step combined values of ``policy`` under any shaper.

    The ADOPS family reads its critic inputs from ``policy``; other shapers
    are evaluated directly on the augmented MDP.
    """
    if _value_fed(shaper_config.kind):
        return practical_adops_q(mdp, policy, im_config, shaper_config, cap)
    aug = shaped_problem(mdp, im_config, shaper_config, cap=cap)
    vals = solve_augmented(aug, policy=check_policy(mdp, policy))
    v_e, q_e = vals.v_e, vals.q_e
    return PolicyQ(aug, q_e, v_e, vals.q_ie, vals.v_ie)


# --------------------------------------------------------------------------
# action-dependent shaping is not a matching scheme
# --------------------------------------------------------------------------

@dataclass
class InexpressibilityReport:
    s: int
    t: int
    returns: list[float]
    gap: float
    tie_tolerance: float

    @property
    def passed(self) -> bool:
        return self.gap > self.tie_tolerance


def grm_inexpressibility_check(mdp: Mdp, tie_tolerance: float = DEFAULT_TIE_TOLERANCE) -> InexpressibilityReport:
    """Use ``F' = R`` as a shaping stream and measure its action dependence.

    The future shaped return of any matching scheme is fixed by the rewards
    already issued, so it cannot depend on the action taken now. With
    ``F' = R`` the intrinsic return of action ``a`` at (s, t) followed by
    optimal play is ``Q*_E(s, a, t)``, which differs across actions at the
    first reachable (s, t) whose Q values are not all tied.
    """
    _, q = value_iteration(mdp)
    N, S, A = mdp.shape
    reach = mdp.start > 0
    for t in range(N):
        for s in np.flatnonzero(reach):
            row = q[t, s]
            gap = float(row.max() - row.min())
            if gap > tie_tolerance:
                return InexpressibilityReport(int(s), t, [float(x) for x in row], gap, tie_tolerance)
        nxt = np.zeros(S, dtype=bool)
        for s in np.flatnonzero(reach):
            if s in mdp.terminal_states:
                continue
            nxt |= (mdp.transition[s] > 0).any(axis=0)
        reach = nxt
    raise OracleError("no reachable (s, t) has actions with distinct returns; the counterexample does not apply")
