"""Synthetic MOBA match generator with planted causal structure.

Matches are simulated one frame per second for two camps of five heroes, a
Tyrant boss, lane soldiers, and three towers per camp. The generator plants
checkable causal rules whose strength is a config knob:

* the camp with higher gold (and, by construction, smaller mean hero-to-Tyrant
  distance at the kill frame) seizes the Tyrant with probability equal to the
  signal strength;
* the winner's gold-difference trajectory is favourable with probability
  (1 + signal) / 2, strictly favourable at strength 1.0;
* scheduled hero deaths pick the lowest-hp hero as victim and the highest
  (level + gold) enemy as killer with probability equal to the signal strength.

Records hold columnar per-second arrays internally; ``Frame`` objects are
materialized on demand.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

N_HEROES = 10
HEROES_PER_CAMP = 5
HERO_POOL = 20
N_TOWERS_PER_CAMP = 3
CAMP_NAMES = ("red", "blue")
TOWER_TYPES = ("outer", "inner", "base")
TYRANT_POS = (0.72, 0.28)
JUNGLE_POS = ((0.5, 0.75), (0.5, 0.25))
LEVEL_GOLD = 320.0  # gold per level step
MAX_LEVEL = 15
RESPAWN_DELAY = 10
APPROACH = 25  # seconds of setup before a planned kill

_RED_ANCHORS = np.array([(0.20, 0.80), (0.30, 0.50), (0.20, 0.20), (0.42, 0.36), (0.36, 0.66)])
_RED_TOWERS = np.array([(0.25, 0.25), (0.15, 0.15), (0.07, 0.07)])


class DatasetError(ValueError):
    """Raised for malformed dataset files, naming the offending line."""


@dataclass(frozen=True)
class GeneratorConfig:
    min_length: int = 360
    max_length: int = 600
    signal_strength: float = 0.9
    tyrant_spawn: int = 120
    tyrant_respawn: int = 120
    n_soldiers: int = 6
    n_jungle_monsters: int = 2
    env_kill_rate: float = 0.06

    def __post_init__(self):
        if not (300 <= self.min_length <= self.max_length <= 1200):
            raise ValueError(
                f"match length must satisfy 300 <= min <= max <= 1200, "
                f"got [{self.min_length}, {self.max_length}]"
            )
        if self.tyrant_respawn <= 0:
            raise ValueError("tyrant_respawn must be positive")
        if not 0.0 <= self.signal_strength <= 1.0:
            raise ValueError("signal_strength must lie in [0, 1]")
        if self.n_soldiers < 0 or self.n_jungle_monsters < 0:
            raise ValueError("entity counts must be non-negative")


@dataclass(frozen=True)
class DeathEvent:
    death_frame: int
    victim: str  # "hero_<slot>" | "tyrant" | "monster_<i>" | "tower_<camp>_<type>"
    killer: str  # "hero_<slot>" | "environment"
    killer_camp: str  # "red" | "blue" | "none"


@dataclass(frozen=True)
class EventInstance:
    task: str
    t: int  # reference game-time: window covers [t - l + 1, t]
    horizon: int
    label: int


@dataclass
class HeroState:
    hero_id: int
    camp: str
    level: int
    kill_count: int
    assist_count: int
    death_count: int
    hp_fraction: float
    position: tuple
    skill_levels: tuple
    gold: float


@dataclass
class GlobalState:
    game_time: int
    alive_heroes: tuple  # (red, blue)
    gold: tuple
    alive_towers: tuple


@dataclass
class MonsterState:
    monster_type: str
    hp_fraction: float
    alive: bool
    position: tuple


@dataclass
class SoldierState:
    camp: str
    soldier_type: str
    hp_fraction: float
    position: tuple


@dataclass
class TowerState:
    camp: str
    tower_type: str
    hp_fraction: float
    alive: bool
    position: tuple


@dataclass
class Frame:
    game_time: int
    hero_states: list
    global_state: GlobalState
    monster_states: list
    soldier_states: list
    tower_states: list


@dataclass
class GameRecord:
    """One simulated match: static rosters plus per-second columnar arrays."""

    game_id: str
    seed: int
    winner: int  # camp index
    length: int
    hero_id: np.ndarray  # (10,)
    hero_camp: np.ndarray  # (10,) 0=red 1=blue
    hero_level: np.ndarray  # (T, 10)
    hero_kills: np.ndarray
    hero_assists: np.ndarray
    hero_deaths: np.ndarray
    hero_hp: np.ndarray
    hero_x: np.ndarray
    hero_y: np.ndarray
    hero_skills: np.ndarray  # (T, 10, 4)
    hero_gold: np.ndarray
    global_gold: np.ndarray  # (T, 2)
    global_alive: np.ndarray  # (T, 2)
    global_towers: np.ndarray  # (T, 2)
    monster_type: list
    monster_pos: np.ndarray  # (M, 2)
    monster_hp: np.ndarray  # (T, M)
    monster_alive: np.ndarray  # (T, M) bool
    soldier_camp: np.ndarray  # (W,)
    soldier_type: list
    soldier_hp: np.ndarray  # (T, W)
    soldier_x: np.ndarray
    soldier_y: np.ndarray
    tower_camp: np.ndarray  # (6,)
    tower_type: list
    tower_pos: np.ndarray  # (6, 2)
    tower_hp: np.ndarray  # (T, 6)
    tower_alive: np.ndarray  # (T, 6) bool
    deaths: list = field(default_factory=list)

    def __eq__(self, other):
        if not isinstance(other, GameRecord):
            return NotImplemented
        for name in self.__dataclass_fields__:
            a, b = getattr(self, name), getattr(other, name)
            if isinstance(a, np.ndarray):
                if not (isinstance(b, np.ndarray) and a.shape == b.shape and np.array_equal(a, b)):
                    return False
            elif a != b:
                return False
        return True

    def frame_at(self, t):
        """Materialize the Frame for game-time ``t`` (1-based)."""
        if not 1 <= t <= self.length:
            raise IndexError(f"game-time {t} outside [1, {self.length}]")
        r = t - 1
        heroes = [
            HeroState(
                hero_id=int(self.hero_id[i]),
                camp=CAMP_NAMES[self.hero_camp[i]],
                level=int(self.hero_level[r, i]),
                kill_count=int(self.hero_kills[r, i]),
                assist_count=int(self.hero_assists[r, i]),
                death_count=int(self.hero_deaths[r, i]),
                hp_fraction=float(self.hero_hp[r, i]),
                position=(float(self.hero_x[r, i]), float(self.hero_y[r, i])),
                skill_levels=tuple(int(v) for v in self.hero_skills[r, i]),
                gold=float(self.hero_gold[r, i]),
            )
            for i in range(N_HEROES)
        ]
        glob = GlobalState(
            game_time=t,
            alive_heroes=(int(self.global_alive[r, 0]), int(self.global_alive[r, 1])),
            gold=(float(self.global_gold[r, 0]), float(self.global_gold[r, 1])),
            alive_towers=(int(self.global_towers[r, 0]), int(self.global_towers[r, 1])),
        )
        monsters = [
            MonsterState(
                monster_type=self.monster_type[m],
                hp_fraction=float(self.monster_hp[r, m]),
                alive=bool(self.monster_alive[r, m]),
                position=(float(self.monster_pos[m, 0]), float(self.monster_pos[m, 1])),
            )
            for m in range(len(self.monster_type))
        ]
        soldiers = [
            SoldierState(
                camp=CAMP_NAMES[self.soldier_camp[w]],
                soldier_type=self.soldier_type[w],
                hp_fraction=float(self.soldier_hp[r, w]),
                position=(float(self.soldier_x[r, w]), float(self.soldier_y[r, w])),
            )
            for w in range(len(self.soldier_type))
        ]
        towers = [
            TowerState(
                camp=CAMP_NAMES[self.tower_camp[j]],
                tower_type=self.tower_type[j],
                hp_fraction=float(self.tower_hp[r, j]),
                alive=bool(self.tower_alive[r, j]),
                position=(float(self.tower_pos[j, 0]), float(self.tower_pos[j, 1])),
            )
            for j in range(2 * N_TOWERS_PER_CAMP)
        ]
        return Frame(t, heroes, glob, monsters, soldiers, towers)

    @property
    def frames(self):
        return [self.frame_at(t) for t in range(1, self.length + 1)]


def _ou_paths(rng, T, n, start, pull, target, sigma, lo, hi):
    """Mean-reverting noise paths, one column per entity."""
    inc = rng.normal(0.0, sigma, size=(T, n))
    out = np.empty((T, n))
    x = start
    for t in range(T):
        x = np.clip(x + pull * (target - x) + inc[t], lo, hi)
        out[t] = x
    return out


def _ramp(hp0, steps):
    """Monotone decline from hp0 to exactly 0 over ``steps`` frames (fast early)."""
    u = np.linspace(1.0 / steps, 1.0, steps)
    vals = hp0 * (1.0 - u) ** 1.4
    vals = np.maximum(vals, 0.02)
    vals[-1] = 0.0
    return vals


def generate_game(seed, config=None):
    """Simulate one match deterministically from ``(seed, config)``."""
    config = config or GeneratorConfig()
    rng = np.random.default_rng(seed)
    s = config.signal_strength

    T = int(rng.integers(config.min_length, config.max_length + 1))
    winner = int(rng.integers(0, 2))
    hero_id = rng.choice(HERO_POOL, size=N_HEROES, replace=False).astype(np.int64)
    hero_camp = np.repeat(np.arange(2), HEROES_PER_CAMP).astype(np.int64)

    # Gold: target camp difference is planted first, hero gold is reconciled to it.
    # The head-start offset keeps even the earliest windows decisively separable.
    drift_sign = 1.0 if winner == 0 else -1.0
    if rng.random() >= (1.0 + s) / 2.0:
        drift_sign = -drift_sign  # upset game: gold trend opposes the winner
    tgrid = np.arange(1, T + 1, dtype=np.float64)
    rate = rng.uniform(8.0, 12.0)
    offset = rng.uniform(200.0, 400.0)
    walk = np.cumsum(rng.normal(0.0, 2.0 * (1.0 - s) + 0.05, size=T))
    gold_diff = drift_sign * (offset + rate * tgrid) + walk

    income = rng.uniform(6.5, 9.5, size=N_HEROES)
    raw_gold = 100.0 + tgrid[:, None] * income[None, :]
    raw_gold += np.cumsum(rng.normal(0.0, 1.5, size=(T, N_HEROES)), axis=0)

    hero_hp = _ou_paths(
        rng, T, N_HEROES, start=rng.uniform(0.7, 0.95, N_HEROES),
        pull=0.08, target=0.85, sigma=0.035, lo=0.3, hi=1.0,
    )

    anchors = np.vstack([_RED_ANCHORS, 1.0 - _RED_ANCHORS])
    hero_x = _ou_paths(rng, T, N_HEROES, start=anchors[:, 0].copy(),
                       pull=0.06, target=anchors[:, 0], sigma=0.015, lo=0.02, hi=0.98)
    hero_y = _ou_paths(rng, T, N_HEROES, start=anchors[:, 1].copy(),
                       pull=0.06, target=anchors[:, 1], sigma=0.015, lo=0.02, hi=0.98)

    kills = np.zeros((T, N_HEROES), dtype=np.int64)
    assists = np.zeros((T, N_HEROES), dtype=np.int64)
    deaths_ct = np.zeros((T, N_HEROES), dtype=np.int64)
    deaths = []
    busy_until = np.full(N_HEROES, -1)

    def plan_actors(tau):
        """Pick victim (lowest hp) and killer (highest level+gold) with probability s."""
        a = max(0, tau - APPROACH)
        eligible = [i for i in range(N_HEROES) if busy_until[i] < a and hero_hp[tau, i] > 0]
        if not eligible:
            return None, None, None
        if rng.random() < s:
            victim = min(eligible, key=lambda i: hero_hp[a, i])
        else:
            victim = int(rng.choice(eligible))
        enemies = [i for i in range(N_HEROES)
                   if hero_camp[i] != hero_camp[victim] and hero_hp[tau, i] > 0]
        if not enemies:
            return None, None, None
        if rng.random() < s:
            killer = max(enemies, key=lambda i: raw_gold[a, i] + raw_gold[a, i] / LEVEL_GOLD)
        else:
            killer = int(rng.choice(enemies))
        return victim, killer, a

    def carve_death(tau, victim):
        a = max(0, tau - APPROACH)
        hero_hp[a:tau + 1, victim] = _ramp(hero_hp[a, victim], tau + 1 - a)
        dead_to = min(T, tau + 1 + RESPAWN_DELAY)
        hero_hp[tau + 1:dead_to, victim] = 0.0
        deaths_ct[tau:, victim] += 1
        busy_until[victim] = dead_to + 2

    tau = 45 + int(rng.integers(0, 10))
    while tau < T - 2:
        n_victims = 2 if rng.random() < 0.10 else 1
        for _ in range(n_victims):
            victim, killer, a = plan_actors(tau)
            if victim is None:
                continue
            carve_death(tau, victim)
            if rng.random() < config.env_kill_rate:
                deaths.append(DeathEvent(tau + 1, f"hero_{victim}", "environment", "none"))
            else:
                kills[tau:, killer] += 1
                raw_gold[tau:, killer] += 250.0
                mates = [i for i in range(N_HEROES)
                         if hero_camp[i] == hero_camp[killer] and i != killer]
                if rng.random() < 0.7:
                    assists[tau:, int(rng.choice(mates))] += 1
                deaths.append(
                    DeathEvent(tau + 1, f"hero_{victim}", f"hero_{killer}",
                               CAMP_NAMES[hero_camp[killer]])
                )
        tau += int(rng.integers(18, 41))

    # Tyrant: alive from spawn, killed repeatedly; the gold-advantaged camp is
    # moved close to the pit ahead of each kill and takes it with probability s.
    monster_type = ["tyrant"] + ["jungle"] * config.n_jungle_monsters
    n_monsters = len(monster_type)
    monster_pos = np.array([TYRANT_POS] + list(JUNGLE_POS)[: config.n_jungle_monsters])
    monster_hp = np.zeros((T, n_monsters))
    monster_alive = np.zeros((T, n_monsters), dtype=bool)

    spawn = config.tyrant_spawn
    if spawn < T:
        monster_hp[spawn - 1:, 0] = 1.0
    tyrant_kills = []
    while True:
        tau = spawn + int(rng.integers(30, 61))
        if tau >= T - 2:
            break
        adv = 0 if gold_diff[tau] > 0 else 1
        kill_camp = adv if rng.random() < s else 1 - adv
        a = tau - APPROACH
        # pin the advantaged camp in a ring around the pit, push the other camp out
        for i in range(N_HEROES):
            near = hero_camp[i] == adv
            radius = rng.uniform(0.03, 0.09) if near else rng.uniform(0.32, 0.45)
            angle = rng.uniform(0.0, 2.0 * np.pi)
            px = np.clip(TYRANT_POS[0] + radius * np.cos(angle), 0.02, 0.98)
            py = np.clip(TYRANT_POS[1] + radius * np.sin(angle), 0.02, 0.98)
            hero_x[a:tau + 1, i] = px
            hero_y[a:tau + 1, i] = py
            back = min(T, tau + 9)
            if back > tau + 1:
                frac = np.linspace(0.0, 1.0, back - tau)[1:, None]
                hero_x[tau + 1:back, i] = px + (hero_x[back - 1, i] - px) * frac[:, 0]
                hero_y[tau + 1:back, i] = py + (hero_y[back - 1, i] - py) * frac[:, 0]
        monster_hp[a:tau + 1, 0] = _ramp(1.0, tau + 1 - a)
        respawn = tau + config.tyrant_respawn
        monster_hp[tau + 1:min(T, respawn), 0] = 0.0
        if respawn < T:
            monster_hp[respawn:, 0] = 1.0
        camp_slots = np.where(hero_camp == kill_camp)[0]
        killer = int(camp_slots[np.argmax(raw_gold[tau, camp_slots])])
        deaths.append(DeathEvent(tau + 1, "tyrant", f"hero_{killer}", CAMP_NAMES[kill_camp]))
        tyrant_kills.append(tau + 1)
        spawn = respawn
        if spawn >= T:
            break
    monster_alive[:, 0] = monster_hp[:, 0] > 0

    for m in range(1, n_monsters):
        t0 = int(rng.integers(30, 90))
        while t0 < T - 5:
            up = int(rng.integers(50, 90))
            end = min(T - 1, t0 + up)
            monster_hp[t0:end + 1, m] = _ramp(1.0, end + 1 - t0)
            if end < T - 1:
                slot = int(rng.integers(0, N_HEROES))
                deaths.append(DeathEvent(end + 1, f"monster_{m}", f"hero_{slot}",
                                         CAMP_NAMES[hero_camp[slot]]))
            t0 = end + 30
        monster_alive[:, m] = monster_hp[:, m] > 0

    # Towers: the loser's fall in order, the base one exactly at the last frame.
    tower_camp = np.repeat(np.arange(2), N_TOWERS_PER_CAMP).astype(np.int64)
    tower_type = list(TOWER_TYPES) * 2
    tower_pos = np.vstack([_RED_TOWERS, 1.0 - _RED_TOWERS])
    tower_hp = np.ones((T, 2 * N_TOWERS_PER_CAMP))
    loser = 1 - winner
    fall_times = {
        (loser, 0): int(T * rng.uniform(0.45, 0.60)),
        (loser, 1): int(T * rng.uniform(0.65, 0.85)),
        (loser, 2): T,
    }
    if rng.random() < 0.35:
        fall_times[(winner, 0)] = int(T * rng.uniform(0.55, 0.85))
    for (camp, idx), fall in sorted(fall_times.items()):
        j = camp * N_TOWERS_PER_CAMP + idx
        a = max(0, fall - 40)
        tower_hp[a:fall, j] = np.linspace(1.0, 0.0, fall - a, endpoint=False)
        tower_hp[fall - 1:, j] = 0.0
        enemy_slots = np.where(hero_camp == 1 - camp)[0]
        killer = int(enemy_slots[np.argmax(raw_gold[fall - 1, enemy_slots])])
        deaths.append(DeathEvent(fall, f"tower_{CAMP_NAMES[camp]}_{TOWER_TYPES[idx]}",
                                 f"hero_{killer}", CAMP_NAMES[1 - camp]))
    tower_alive = tower_hp > 0

    # Reconcile hero gold so camp totals realize the planted difference exactly.
    red = hero_camp == 0
    raw_red = raw_gold[:, red].sum(axis=1)
    raw_blue = raw_gold[:, ~red].sum(axis=1)
    total = raw_red + raw_blue
    target_red = (total + gold_diff) / 2.0
    hero_gold = raw_gold.copy()
    hero_gold[:, red] += ((target_red - raw_red) / HEROES_PER_CAMP)[:, None]
    hero_gold[:, ~red] += ((total - target_red - raw_blue) / HEROES_PER_CAMP)[:, None]
    hero_gold = np.maximum(np.round(hero_gold, 2), 0.0)

    hero_level = np.clip(1 + (hero_gold / LEVEL_GOLD).astype(np.int64), 1, MAX_LEVEL)
    skills = np.empty((T, N_HEROES, 4), dtype=np.int64)
    for j in range(3):
        skills[:, :, j] = np.clip((hero_level - j + 1) // 3, 0, 6)
    skills[:, :, 3] = np.clip((hero_level - 3) // 4, 0, 3)

    # Soldiers march up and down their lane; hp cycles as waves trade.
    W = config.n_soldiers
    soldier_camp = (np.arange(W) % 2).astype(np.int64)
    soldier_type = ["melee" if w % 4 < 2 else "ranged" for w in range(W)]
    phase = rng.uniform(0.0, 1.0, size=W)
    path = (tgrid[:, None] / 90.0 + phase[None, :]) % 2.0
    path = np.where(path > 1.0, 2.0 - path, path)
    soldier_x = 0.1 + 0.8 * path
    soldier_y = np.clip(soldier_x + rng.normal(0.0, 0.02, size=(T, W)), 0.02, 0.98)
    soldier_hp = 1.0 - ((tgrid[:, None] / 25.0 + phase[None, :]) % 1.0) * 0.8

    hero_hp = np.round(hero_hp, 4)
    hero_x = np.round(hero_x, 4)
    hero_y = np.round(hero_y, 4)
    monster_hp = np.round(monster_hp, 4)
    soldier_hp = np.round(soldier_hp, 4)
    soldier_x = np.round(soldier_x, 4)
    soldier_y = np.round(soldier_y, 4)
    tower_hp = np.round(tower_hp, 4)
    monster_pos = np.round(monster_pos, 4)
    tower_pos = np.round(tower_pos, 4)

    global_alive = np.stack([(hero_hp[:, red] > 0).sum(axis=1),
                             (hero_hp[:, ~red] > 0).sum(axis=1)], axis=1).astype(np.int64)
    global_gold = np.stack([hero_gold[:, red].sum(axis=1),
                            hero_gold[:, ~red].sum(axis=1)], axis=1)
    global_gold = np.round(global_gold, 2)
    global_towers = np.stack([tower_alive[:, :N_TOWERS_PER_CAMP].sum(axis=1),
                              tower_alive[:, N_TOWERS_PER_CAMP:].sum(axis=1)], axis=1
                             ).astype(np.int64)

    deaths.sort(key=lambda e: (e.death_frame, e.victim))
    return GameRecord(
        game_id=f"g{seed:08d}", seed=int(seed), winner=winner, length=T,
        hero_id=hero_id, hero_camp=hero_camp,
        hero_level=hero_level, hero_kills=kills, hero_assists=assists,
        hero_deaths=deaths_ct, hero_hp=hero_hp, hero_x=hero_x, hero_y=hero_y,
        hero_skills=skills, hero_gold=hero_gold,
        global_gold=global_gold, global_alive=global_alive, global_towers=global_towers,
        monster_type=monster_type, monster_pos=monster_pos,
        monster_hp=monster_hp, monster_alive=monster_alive,
        soldier_camp=soldier_camp, soldier_type=soldier_type,
        soldier_hp=soldier_hp, soldier_x=soldier_x, soldier_y=soldier_y,
        tower_camp=tower_camp, tower_type=tower_type, tower_pos=tower_pos,
        tower_hp=tower_hp, tower_alive=tower_alive,
        deaths=deaths,
    )


def generate_games(seeds, config=None):
    return [generate_game(int(s), config) for s in seeds]


TASKS = ("win", "tyrant", "kill", "bekill")
TASK_CLASSES = {"win": 2, "tyrant": 2, "kill": 10, "bekill": 10}
HORIZONS = (5, 10, 15, 20)
WIN_INTERVAL = 60
CAMP_INDEX = {"red": 0, "blue": 1}


def _slot(name):
    return int(name.rsplit("_", 1)[1])


def extract_event_instances(record, task, horizon, window):
    """List the labelled anchor times for one task over one record.

    ``horizon`` is the number of seconds between the window end and the event
    (ignored for ``win``); ``window`` is the sequence length l. Anchors whose
    window would precede the first frame are dropped.
    """
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")
    if task != "win" and horizon not in HORIZONS:
        raise ValueError(f"horizon {horizon} not in {HORIZONS}")
    if window < 1:
        raise ValueError("window length must be >= 1")

    out = []
    if task == "win":
        for t in range(WIN_INTERVAL, record.length + 1, WIN_INTERVAL):
            if t - window + 1 >= 1:
                out.append(EventInstance("win", t, 0, record.winner))
        return out

    for ev in record.deaths:
        t = ev.death_frame - horizon
        if t - window + 1 < 1 or t > record.length:
            continue
        if task == "tyrant" and ev.victim == "tyrant":
            out.append(EventInstance("tyrant", t, horizon, CAMP_INDEX[ev.killer_camp]))
        elif task == "kill" and ev.victim.startswith("hero_") and ev.killer.startswith("hero_"):
            out.append(EventInstance("kill", t, horizon, _slot(ev.killer)))
        elif task == "bekill" and ev.victim.startswith("hero_"):
            out.append(EventInstance("bekill", t, horizon, _slot(ev.victim)))
    return out


SCHEMA_VERSION = 1


def _record_to_json(record):
    doc = {
        "schema_version": SCHEMA_VERSION,
        "game_id": record.game_id,
        "seed": record.seed,
        "winner": CAMP_NAMES[record.winner],
        "length": record.length,
        "roster": {
            "hero_id": record.hero_id.tolist(),
            "hero_camp": [CAMP_NAMES[c] for c in record.hero_camp],
            "monster_type": list(record.monster_type),
            "monster_pos": record.monster_pos.tolist(),
            "soldier_camp": [CAMP_NAMES[c] for c in record.soldier_camp],
            "soldier_type": list(record.soldier_type),
            "tower_camp": [CAMP_NAMES[c] for c in record.tower_camp],
            "tower_type": list(record.tower_type),
            "tower_pos": record.tower_pos.tolist(),
        },
        "death_info": [
            {"death_frame": e.death_frame, "victim": e.victim,
             "killer": e.killer, "killer_camp": e.killer_camp}
            for e in record.deaths
        ],
        "frames": [
            {
                "game_time": t + 1,
                "hero": {
                    "level": record.hero_level[t].tolist(),
                    "kill_count": record.hero_kills[t].tolist(),
                    "assist_count": record.hero_assists[t].tolist(),
                    "death_count": record.hero_deaths[t].tolist(),
                    "hp_fraction": record.hero_hp[t].tolist(),
                    "x": record.hero_x[t].tolist(),
                    "y": record.hero_y[t].tolist(),
                    "skill_levels": record.hero_skills[t].tolist(),
                    "gold": record.hero_gold[t].tolist(),
                },
                "global": {
                    "game_time": t + 1,
                    "alive_heroes": record.global_alive[t].tolist(),
                    "gold": record.global_gold[t].tolist(),
                    "alive_towers": record.global_towers[t].tolist(),
                },
                "monster": {
                    "hp_fraction": record.monster_hp[t].tolist(),
                    "alive": record.monster_alive[t].tolist(),
                },
                "soldier": {
                    "hp_fraction": record.soldier_hp[t].tolist(),
                    "x": record.soldier_x[t].tolist(),
                    "y": record.soldier_y[t].tolist(),
                },
                "tower": {
                    "hp_fraction": record.tower_hp[t].tolist(),
                    "alive": record.tower_alive[t].tolist(),
                },
            }
            for t in range(record.length)
        ],
    }
    return json.dumps(doc, separators=(",", ":"))


def _record_from_json(doc):
    frames = doc["frames"]
    camp_idx = {"red": 0, "blue": 1}

    def stack(group, key, dtype):
        return np.array([f[group][key] for f in frames], dtype=dtype)

    roster = doc["roster"]
    return GameRecord(
        game_id=doc["game_id"],
        seed=doc["seed"],
        winner=camp_idx[doc["winner"]],
        length=doc["length"],
        hero_id=np.array(roster["hero_id"], dtype=np.int64),
        hero_camp=np.array([camp_idx[c] for c in roster["hero_camp"]], dtype=np.int64),
        hero_level=stack("hero", "level", np.int64),
        hero_kills=stack("hero", "kill_count", np.int64),
        hero_assists=stack("hero", "assist_count", np.int64),
        hero_deaths=stack("hero", "death_count", np.int64),
        hero_hp=stack("hero", "hp_fraction", np.float64),
        hero_x=stack("hero", "x", np.float64),
        hero_y=stack("hero", "y", np.float64),
        hero_skills=stack("hero", "skill_levels", np.int64),
        hero_gold=stack("hero", "gold", np.float64),
        global_gold=stack("global", "gold", np.float64),
        global_alive=stack("global", "alive_heroes", np.int64),
        global_towers=stack("global", "alive_towers", np.int64),
        monster_type=list(roster["monster_type"]),
        monster_pos=np.array(roster["monster_pos"], dtype=np.float64),
        monster_hp=stack("monster", "hp_fraction", np.float64),
        monster_alive=stack("monster", "alive", bool),
        soldier_camp=np.array([camp_idx[c] for c in roster["soldier_camp"]], dtype=np.int64),
        soldier_type=list(roster["soldier_type"]),
        soldier_hp=stack("soldier", "hp_fraction", np.float64),
        soldier_x=stack("soldier", "x", np.float64),
        soldier_y=stack("soldier", "y", np.float64),
        tower_camp=np.array([camp_idx[c] for c in roster["tower_camp"]], dtype=np.int64),
        tower_type=list(roster["tower_type"]),
        tower_pos=np.array(roster["tower_pos"], dtype=np.float64),
        tower_hp=stack("tower", "hp_fraction", np.float64),
        tower_alive=stack("tower", "alive", bool),
        deaths=[
            DeathEvent(e["death_frame"], e["victim"], e["killer"], e["killer_camp"])
            for e in doc["death_info"]
        ],
    )


def save_dataset(records, path):
    """Write records as JSON Lines, one match per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(_record_to_json(record))
            fh.write("\n")


def load_dataset(path):
    """Read a JSON Lines dataset; malformed lines name their line number."""
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as err:
                raise DatasetError(f"line {lineno}: invalid JSON ({err.msg})") from err
            try:
                if doc["schema_version"] != SCHEMA_VERSION:
                    raise DatasetError(
                        f"line {lineno}: unsupported schema_version {doc['schema_version']}"
                    )
                records.append(_record_from_json(doc))
            except KeyError as err:
                raise DatasetError(f"line {lineno}: missing field {err.args[0]!r}") from err
    return records
