"""Campaign configuration: JSON parsing, validation, and serialization.

A campaign file is a JSON document listing named game entries; every
omitted field takes the documented default, unknown keys are rejected, and
semantic rules (like the attacker budget being smaller than the flock) are
checked after the structural pass.  ``serialize_campaign`` always writes
the fully explicit form, so parse(serialize(parse(doc))) round-trips.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from importlib import resources

import jsonschema

from .ampc import MODE_MAXIMIZE, AmpcConfig
from .fitness import FitnessParams
from .flock import DynamicsBounds, VGeometry
from .games import (
    AmpcDisplacementAttack,
    GameConfig,
    RandomDisplacementAttack,
    RemoveBirdsAttack,
)
from .pso import PsoParams
from .smc import SmcPlan


class ConfigError(ValueError):
    """A campaign document failed structural or semantic validation."""


@dataclass(frozen=True)
class CampaignEntry:
    """One named experiment: a game configuration plus its sampling plan."""

    name: str
    game: GameConfig
    plan: SmcPlan


@dataclass(frozen=True)
class Campaign:
    entries: tuple[CampaignEntry, ...]
    output_dir: str = "out"


def _schema() -> dict:
    text = resources.files("vflock").joinpath("config_schema.json").read_text()
    return json.loads(text)


def _structural_check(doc: dict) -> None:
    validator = jsonschema.Draft202012Validator(_schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        path = "$" + "".join(
            f"[{p}]" if isinstance(p, int) else f".{p}" for p in err.absolute_path
        )
        raise ConfigError(f"{path}: {err.message}")


def _entry_to_config(raw: dict, path: str) -> tuple[GameConfig, SmcPlan]:
    def fail(key, message):
        raise ConfigError(f"{path}.{key}: {message}")

    game = raw["game"]
    birds = raw.get("birds", 7)
    fitness = FitnessParams(**raw.get("fitness", {}))
    bounds = DynamicsBounds(**raw.get("bounds", {}))
    geom_raw = dict(raw.get("geometry", {}))
    if "leader_velocity" in geom_raw:
        geom_raw["leader_velocity"] = tuple(geom_raw["leader_velocity"])
    geometry = VGeometry(**geom_raw)
    pso = PsoParams(**raw.get("pso", {}))

    if game == "rbg":
        for key in ("displacement_count", "displacement_max", "attack_steps", "fitness_cap"):
            if key in raw:
                fail(key, "only valid for displacement games")
        mode = raw.get("remove_mode", "explicit")
        if mode == "explicit":
            if "remove_count" in raw:
                fail("remove_count", "only valid with remove_mode random or worst")
            remove = raw.get("remove")
            if not remove:
                fail("remove", "explicit removal needs a non-empty bird list")
            if len(set(remove)) != len(remove):
                fail("remove", f"bird numbers {remove} contain duplicates")
            if len(remove) >= birds:
                fail("remove", f"cannot remove {len(remove)} of {birds} birds")
            for bird in remove:
                if bird > birds:
                    fail("remove", f"bird number {bird} out of range 1..{birds}")
            attack = RemoveBirdsAttack(birds=tuple(remove), selection="explicit")
        else:
            if "remove" in raw:
                fail("remove", "only valid with remove_mode explicit")
            count = raw.get("remove_count", 1)
            if count >= birds:
                fail("remove_count", f"cannot remove {count} of {birds} birds")
            attack = RemoveBirdsAttack(count=count, selection=mode)
    else:
        for key in ("remove", "remove_mode", "remove_count"):
            if key in raw:
                fail(key, "only valid for the remove-birds game")
        count = raw.get("displacement_count", 1)
        magnitude = raw.get("displacement_max", 1.0)
        attack_steps = raw.get("attack_steps", 20)
        if count >= birds:
            fail("displacement_count", f"must be < birds ({birds}), got {count}")
        if game == "rdg":
            if "fitness_cap" in raw:
                fail("fitness_cap", "only valid for the ampc game")
            attack = RandomDisplacementAttack(
                count=count, magnitude=magnitude, attack_steps=attack_steps
            )
        else:
            ampc = AmpcConfig(
                phi=raw.get("phi", 1e-3),
                h_max=raw.get("h_max", 5),
                m=raw.get("levels", 40),
                beta=raw.get("beta", 10),
                pso=pso,
                mode=MODE_MAXIMIZE,
                fitness_cap=raw.get("fitness_cap", 10.0),
            )
            attack = AmpcDisplacementAttack(
                count=count, magnitude=magnitude, attack_steps=attack_steps, ampc=ampc
            )

    max_steps = raw.get("max_steps", 40)
    if game != "rbg" and raw.get("attack_steps", 20) > max_steps:
        fail("attack_steps", f"exceeds max_steps {max_steps}")

    try:
        config = GameConfig(
            attack=attack,
            bird_count=birds,
            phi=raw.get("phi", 1e-3),
            h_max=raw.get("h_max", 5),
            m=raw.get("levels", 40),
            max_steps=max_steps,
            beta=raw.get("beta", 10),
            pso=pso,
            fitness=fitness,
            bounds=bounds,
            geometry=geometry,
            seed=raw.get("seed", 0),
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    plan = SmcPlan(
        epsilon=raw.get("epsilon", 0.1),
        delta=raw.get("delta", 0.01),
        sample_count=raw.get("samples"),
        master_seed=raw.get("seed", 0),
        parallelism=raw.get("parallelism", 1),
    )
    return config, plan


def parse_config(text: str) -> Campaign:
    """Parse and validate a campaign document.

    Structural violations (types, unknown keys) and semantic violations
    (budgets, ranges) both raise ConfigError naming the offending path.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("$: the top level must be a JSON object")
    if "entries" not in doc:
        # Single-entry shorthand: the whole document is one entry.
        output_dir = doc.pop("output_dir", "out")
        doc = {"output_dir": output_dir, "entries": [{"name": "run", **doc}]}
    _structural_check(doc)

    entries = []
    names = set()
    for i, raw in enumerate(doc["entries"]):
        path = f"$.entries[{i}]"
        name = raw.get("name", f"entry{i}")
        if name in names:
            raise ConfigError(f"{path}.name: duplicate entry name {name!r}")
        names.add(name)
        config, plan = _entry_to_config(raw, path)
        entries.append(CampaignEntry(name=name, game=config, plan=plan))
    return Campaign(entries=tuple(entries), output_dir=doc.get("output_dir", "out"))


def _entry_to_dict(entry: CampaignEntry) -> dict:
    config, plan = entry.game, entry.plan
    out = {
        "name": entry.name,
        "game": config.game_name,
        "birds": config.bird_count,
        "phi": config.phi,
        "h_max": config.h_max,
        "levels": config.m,
        "max_steps": config.max_steps,
        "beta": config.beta,
        "seed": config.seed,
        "epsilon": plan.epsilon,
        "delta": plan.delta,
        "samples": plan.sample_count,
        "parallelism": plan.parallelism,
        "fitness": asdict(config.fitness),
        "bounds": asdict(config.bounds),
        "geometry": {**asdict(config.geometry), "leader_velocity": list(config.geometry.leader_velocity)},
        "pso": asdict(config.pso),
    }
    attack = config.attack
    if isinstance(attack, RemoveBirdsAttack):
        out["remove_mode"] = attack.selection
        if attack.selection == "explicit":
            out["remove"] = list(attack.birds)
        else:
            out["remove_count"] = attack.count
    else:
        out["displacement_count"] = attack.count
        out["displacement_max"] = attack.magnitude
        out["attack_steps"] = attack.attack_steps
        if isinstance(attack, AmpcDisplacementAttack):
            out["fitness_cap"] = attack.ampc.fitness_cap
    return out


def serialize_campaign(campaign: Campaign) -> str:
    """Fully explicit JSON form; parsing it back yields an equal Campaign."""
    doc = {
        "output_dir": campaign.output_dir,
        "entries": [_entry_to_dict(e) for e in campaign.entries],
    }
    return json.dumps(doc, indent=2, sort_keys=True)
