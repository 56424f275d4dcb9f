"""Small benchmark instances with known optima.

Each instance carries a certificate controller whose exact value is the
recorded optimum (or, where the true optimum is not known in closed form, a
lower bound labelled as such).
"""

from __future__ import annotations

import itertools
import os
from dataclasses import dataclass

import numpy as np

from .formats import write_fsc, write_model
from .model import Fsc, HmPomdp, Objective, Pomdp
from .verify import robust_value, value_of_fsc

TOY_DIR = os.path.join(os.path.dirname(__file__), "toys")


@dataclass
class ToyInstance:
    name: str
    model: Pomdp | HmPomdp
    optimum: float
    provenance: str
    certificate: Fsc | None
    description: str
    exact: bool = True  # False: optimum is only a lower bound

    @property
    def is_family(self) -> bool:
        return isinstance(self.model, HmPomdp)

    def certificate_value(self, **kwargs) -> float:
        if self.is_family:
            return robust_value(self.model, self.certificate, **kwargs).value
        return value_of_fsc(self.model, self.certificate, **kwargs).value


def memoryless(choice, num_observations, num_actions) -> Fsc:
    """One-node controller from a per-observation action (int) or distribution."""
    d = np.zeros((1, num_observations, num_actions))
    for z, c in enumerate(choice):
        if np.isscalar(c):
            d[0, z, int(c)] = 1.0
        else:
            d[0, z] = c
    return Fsc(d, np.ones((1, num_observations, 1)))


# -- instances -------------------------------------------------------------------


def chain() -> ToyInstance:
    """s0 -> s1 -> s2 -> goal under 'forward'; 'stay' self-loops. All non-goal states look alike."""
    trans = {}
    for s in range(3):
        trans[(s, 0)] = {s + 1: 1.0}
        trans[(s, 1)] = {s: 1.0}
    m = Pomdp.build(4, 2, [0, 0, 0, 1], trans, targets=[3], name="chain")
    return ToyInstance("chain", m, 1.0, "trivial: deterministic chain", memoryless([0, 0], 2, 2),
                       "deterministic goal chain; 'forward' always reaches the goal")


def geometric() -> ToyInstance:
    """One action: stay w.p. 0.5 or finish w.p. 0.5, reward 1 per step. Value x = 1 + x/2 = 2."""
    m = Pomdp.build(2, 1, [0, 1], {(0, 0): {0: 0.5, 1: 0.5}}, rewards={(0, 0): 1.0}, targets=[1],
                    objective=Objective.REACH_REWARD_MAX, name="geometric")
    return ToyInstance("geometric", m, 2.0, "derived: fixed point x = 1 + 0.5 x", memoryless([0, 0], 2, 1),
                       "geometric self-loop with unit reward per step")


CUE_START, CUE_L, CUE_R, DEC_L, DEC_R, CUE_GOAL, CUE_SINK = range(7)


def cue() -> ToyInstance:
    """A cue seen once must be remembered for one step.

    start -> cueL | cueR (1/2 each, distinct observations) -> blank decision
    state. Action 0 wins after cueL, action 1 after cueR; the other action
    falls into a sink.
    """
    obs = [0, 1, 2, 3, 3, 4, 5]
    trans = {}
    for a in range(2):
        trans[(CUE_START, a)] = {CUE_L: 0.5, CUE_R: 0.5}
        trans[(CUE_L, a)] = {DEC_L: 1.0}
        trans[(CUE_R, a)] = {DEC_R: 1.0}
        trans[(CUE_SINK, a)] = {CUE_SINK: 1.0}
    trans[(DEC_L, 0)] = {CUE_GOAL: 1.0}
    trans[(DEC_L, 1)] = {CUE_SINK: 1.0}
    trans[(DEC_R, 0)] = {CUE_SINK: 1.0}
    trans[(DEC_R, 1)] = {CUE_GOAL: 1.0}
    m = Pomdp.build(7, 2, obs, trans, targets=[CUE_GOAL], name="cue")
    Z, A = 6, 2
    d = np.zeros((2, Z, A))
    mem = np.zeros((2, Z, 2))
    d[:, :, 0] = 1.0
    d[1, 3] = [0.0, 1.0]
    for n in range(2):
        mem[n, :, n] = 1.0
    mem[0, 2] = [0.0, 1.0]  # cueR switches to node 1
    return ToyInstance("cue", m, 1.0, "derived: hand-built 2-node controller, exact evaluation",
                       Fsc(d, mem), "one bit of memory needed; memoryless optimum is 0.5")


ADVERSARIAL_MEMBER = 7


def family() -> ToyInstance:
    """16 one-decision members; action 0 is best except in one member where it always fails.

    Nominal members: a0 reaches the goal w.p. p_i in [0.9, 1], a1 w.p. 0.8,
    a2 w.p. 0.5. The adversarial member sends a0 to the sink. Playing a1
    everywhere is robustly optimal with value 0.8, while the best single
    member is worth 1.0.
    """
    members = []
    nominal = 0
    for i in range(16):
        if i == ADVERSARIAL_MEMBER:
            p0 = 0.0
        else:
            p0 = 0.9 + 0.1 * nominal / 14
            nominal += 1
        trans = {
            (0, 0): {1: p0, 2: 1.0 - p0},
            (0, 1): {1: 0.8, 2: 0.2},
            (0, 2): {1: 0.5, 2: 0.5},
            (2, 0): {2: 1.0}, (2, 1): {2: 1.0}, (2, 2): {2: 1.0},
        }
        members.append(Pomdp.build(3, 3, [0, 1, 2], trans, targets=[1], name=f"family[{i}]"))
    hm = HmPomdp(tuple(members), name="family")
    return ToyInstance("family", hm, 0.8, "derived: exhaustive deterministic 1-3 node enumeration",
                       memoryless([1, 0, 0], 3, 3),
                       "16-member family with one adversarial member; robust optimum 0.8 vs 1.0 best single")


def alternate() -> ToyInstance:
    """Rewards switching actions: a switch finishes w.p. 0.1, a repeat dies w.p. 0.05.

    States: 0 fresh, 1 last played a0, 2 last played a1, 3 goal, 4 sink; all
    live states share one observation, so good play needs memory.
    """
    trans = {
        (0, 0): {3: 0.1, 1: 0.9}, (0, 1): {3: 0.1, 2: 0.9},
        (1, 0): {4: 0.05, 1: 0.95}, (1, 1): {3: 0.1, 2: 0.9},
        (2, 0): {3: 0.1, 1: 0.9}, (2, 1): {4: 0.05, 2: 0.95},
        (4, 0): {4: 1.0}, (4, 1): {4: 1.0},
    }
    m = Pomdp.build(5, 2, [0, 0, 0, 1, 2], trans, targets=[3], name="alternate")
    return ToyInstance("alternate", m, 1.0, "derived: alternating 2-node controller never repeats",
                       planted_alternating(0.0), "period-2 behaviour on a single repeated observation")


def planted_alternating(noise: float = 0.2) -> Fsc:
    """Two nodes that flip every step; node n plays action n w.p. 1 - noise."""
    Z, A = 3, 2
    d = np.zeros((2, Z, A))
    m = np.zeros((2, Z, 2))
    for n in range(2):
        d[n, :, n] = 1.0 - noise
        d[n, :, 1 - n] += noise
        m[n, :, 1 - n] = 1.0
    return Fsc(d, m)


def two_obs() -> ToyInstance:
    """Action 0 finishes from either observation; action 1 moves on and then dies."""
    trans = {
        (0, 0): {2: 1.0}, (0, 1): {1: 1.0},
        (1, 0): {2: 1.0}, (1, 1): {3: 1.0},
        (3, 0): {3: 1.0}, (3, 1): {3: 1.0},
    }
    m = Pomdp.build(4, 2, [0, 1, 2, 3], trans, targets=[2], name="two-obs")
    return ToyInstance("two-obs", m, 1.0, "trivial: action 0 always finishes", memoryless([0, 0, 0, 0], 4, 2),
                       "two observations, the same action is optimal in both")


EVADE_SIZE = 4
_MOVES = ((0, -1), (1, 0), (0, 1), (-1, 0))  # N E S W as (dx, dy)
# Exact value of the certificate controller, computed once with a direct sparse
# linear solve (independent of the iterative solver).
EVADE_CERTIFICATE_VALUE = 0.9341620370370369


def evade() -> ToyInstance:
    """Reach the far corner of a grid while a random pursuer roams.

    The agent sees its own cell and whether the pursuer is adjacent; being on
    the pursuer's cell after either move means capture (a sink). Off-grid moves
    are illegal.
    """
    n = EVADE_SIZE
    cells = [(x, y) for y in range(n) for x in range(n)]
    cid = {c: i for i, c in enumerate(cells)}
    C = len(cells)
    goal, caught = C * C, C * C + 1
    S = C * C + 2

    def sid(a, p):
        return cid[a] * C + cid[p]

    obs = np.zeros(S, dtype=np.int64)
    legal = np.zeros((S, 4), dtype=bool)
    trans = {}
    for a in cells:
        for p in cells:
            s = sid(a, p)
            adjacent = abs(a[0] - p[0]) + abs(a[1] - p[1]) <= 1
            obs[s] = cid[a] * 2 + int(adjacent)
            for k, (dx, dy) in enumerate(_MOVES):
                a2 = (a[0] + dx, a[1] + dy)
                if a2 not in cid:
                    continue
                legal[s, k] = True
                row = {}
                if a == p or a2 == p:
                    row[caught] = 1.0
                elif a2 == (n - 1, n - 1):
                    row[goal] = 1.0
                else:
                    opts = [(p[0] + ex, p[1] + ey) for ex, ey in _MOVES + ((0, 0),)]
                    opts = [q for q in opts if q in cid]
                    for q in opts:
                        dst = caught if q == a2 else sid(a2, q)
                        row[dst] = row.get(dst, 0.0) + 1.0 / len(opts)
                trans[(s, k)] = row
    obs[goal], obs[caught] = 2 * C, 2 * C + 1
    legal[goal] = legal[caught] = True
    for k in range(4):
        trans[(caught, k)] = {caught: 1.0}
    start = sid((0, 0), (0, n - 1))
    m = Pomdp.build(S, 4, obs, trans, targets=[goal], legal=legal, initial_state=start,
                    num_observations=2 * C + 2, name="evade")
    return ToyInstance("evade", m, EVADE_CERTIFICATE_VALUE,
                       "lower bound: value of a greedy 2-node controller (sparse direct solve)",
                       evade_certificate(m), "grid pursuit-evasion, 258 states", exact=False)


def evade_certificate(m: Pomdp) -> Fsc:
    """Zig-zag toward the corner: node 0 prefers east, node 1 prefers south; swap on contact."""
    n = EVADE_SIZE
    Z = m.num_observations
    d = np.zeros((2, Z, 4))
    mem = np.zeros((2, Z, 2))
    legal = m.legal_by_observation()
    for z in range(Z):
        for node in range(2):
            if z >= 2 * n * n:
                d[node, z, 0] = 1.0
                mem[node, z, node] = 1.0
                continue
            adjacent = z % 2 == 1
            prefs = [1, 2] if node == 0 else [2, 1]
            choice = next((k for k in prefs if legal[z, k]), int(np.flatnonzero(legal[z])[0]))
            d[node, z, choice] = 1.0
            nxt = 1 - node if adjacent else node
            mem[node, z, nxt] = 1.0
    return Fsc(d, mem)


ALL = (chain, geometric, cue, family, alternate, two_obs, evade)


def generate_toys() -> dict[str, ToyInstance]:
    return {inst.name: inst for inst in (make() for make in ALL)}


def get(name: str) -> ToyInstance:
    for make in ALL:
        inst = make()
        if inst.name == name:
            return inst
    raise KeyError(f"unknown toy {name!r}")


def write_toys(out_dir: str = TOY_DIR) -> list[str]:
    """Write every instance and its certificate; returns the written paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for inst in generate_toys().values():
        ext = ".hmpomdp" if inst.is_family else ".pomdp"
        path = os.path.join(out_dir, inst.name + ext)
        write_model(inst.model, path)
        paths.append(path)
        if inst.certificate is not None:
            cpath = os.path.join(out_dir, inst.name + ".fsc")
            write_fsc(inst.certificate, cpath)
            paths.append(cpath)
    return paths


# -- brute-force oracle ---------------------------------------------------------


def _relevant_observations(model: Pomdp) -> list[int]:
    live = ~model.is_target & ~model.dead_ends()
    return sorted(set(model.observation[live].tolist()))


def enumerate_deterministic(model: Pomdp, num_nodes: int):
    """Every deterministic controller with ``num_nodes`` nodes on the observations that matter.

    Observations seen only in targets or dead ends get a fixed legal action
    and keep the node, since choices there cannot change the value.
    """
    Z, A, N = model.num_observations, model.num_actions, num_nodes
    legal = model.legal_by_observation()
    rel = _relevant_observations(model)
    options = [[(a, n2) for a in np.flatnonzero(legal[z]) for n2 in range(N)] for z in rel]
    slots = [(n, k) for n in range(N) for k in range(len(rel))]
    base_d = np.zeros((N, Z, A))
    base_m = np.zeros((N, Z, N))
    for z in range(Z):
        a0 = int(np.flatnonzero(legal[z])[0])
        base_d[:, z, a0] = 1.0
        for n in range(N):
            base_m[n, z, n] = 1.0
    for combo in itertools.product(*(options[k] for _, k in slots)):
        d = base_d.copy()
        m = base_m.copy()
        for (n, k), (a, n2) in zip(slots, combo):
            z = rel[k]
            d[n, z] = 0.0
            d[n, z, a] = 1.0
            m[n, z] = 0.0
            m[n, z, n2] = 1.0
        yield Fsc(d, m)


def brute_force_optimum(model: Pomdp | HmPomdp, max_nodes: int = 3) -> tuple[float, Fsc]:
    """Best exact (robust) value over deterministic controllers with up to ``max_nodes`` nodes."""
    base = model.members[0] if isinstance(model, HmPomdp) else model
    best_v, best_f = None, None
    for N in range(1, max_nodes + 1):
        for f in enumerate_deterministic(base, N):
            if isinstance(model, HmPomdp):
                v = robust_value(model, f, undefined_as_worst=True).value
            else:
                try:
                    v = value_of_fsc(model, f).value
                except Exception:
                    continue
            if best_v is None or base.objective.worse(best_v, v):
                best_v, best_f = v, f
    return best_v, best_f


def random_fsc(model: Pomdp | HmPomdp, num_nodes: int, rng: np.random.Generator) -> Fsc:
    """Stochastic controller with Dirichlet rows, restricted to the legal actions of each observation."""
    base = model.members[0] if isinstance(model, HmPomdp) else model
    Z, A = base.num_observations, base.num_actions
    legal = base.legal_by_observation()
    d = rng.dirichlet(np.ones(A), size=(num_nodes, Z)) * legal[None, :, :]
    d[d.sum(axis=2) == 0] = 1.0
    d /= d.sum(axis=2, keepdims=True)
    m = rng.dirichlet(np.ones(num_nodes), size=(num_nodes, Z))
    return Fsc(d, m)
