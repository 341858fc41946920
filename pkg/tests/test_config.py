import json

import pytest

from app.services.quasimorphism import resolve_quasimorphism
from app.utils.config import (
    apply_overrides,
    config_from_dict,
    config_hash,
    l1_grid,
    load_config,
    normalize_config,
)
from app.utils.validation import ValidationError


def _raw(**overrides):
    raw = {"experiment": "phi", "system": {"preset": "identity"}, "sampling": {"N": 20, "n": 4}}
    raw.update(overrides)
    return raw


def test_load_and_normalize_round_trip(tmp_path):
    path = tmp_path / "phi.json"
    path.write_text(json.dumps(_raw()), encoding="utf-8")
    config = load_config(path)
    text = normalize_config(config)
    again = config_from_dict(json.loads(text))
    assert normalize_config(again) == text
    assert config_hash(again) == config_hash(config)
    assert text.endswith("\n")


def test_hash_tracks_every_field():
    config = config_from_dict(_raw())
    assert config_hash(apply_overrides(config, seed=5)) != config_hash(config)
    assert apply_overrides(config, out="elsewhere").output == "elsewhere"


@pytest.mark.parametrize(
    ("raw", "field"),
    [
        (_raw(experiment="bogus"), "experiment"),
        (_raw(extra=1), "extra"),
        (_raw(sampling={"N": 0}), "sampling.N"),
        (_raw(sampling={"bogus": 1}), "sampling.bogus"),
        (_raw(system={"area": 1.5}), "system.area"),
        (_raw(estimator={"p_schedule": [4, 2]}), "estimator.p_schedule"),
        (_raw(estimator={"quasimorphism": "nope"}), "estimator.quasimorphism"),
        (_raw(experiment="scaling", estimator={"eps_grid": [0.5], "truncation": "enforce_reducible_vanishing"}), "estimator.eps_grid"),
        (_raw(experiment="scaling"), "estimator.truncation"),
        (_raw(experiment="embedding", estimator={"quasimorphism": "synthetic"}), "estimator.quasimorphism"),
        (_raw(embedding={"m": 2, "k_grid": [[1, 2, 3]]}), "embedding.k_grid[0]"),
        (_raw(system={"preset": "embedding", "k": [1]}), "system.k"),
    ],
)
def test_validation_names_the_field(raw, field):
    with pytest.raises(ValidationError) as info:
        config_from_dict(raw)
    assert info.value.field == field


def test_file_errors_are_config_errors(tmp_path):
    with pytest.raises(ValidationError) as missing:
        load_config(tmp_path / "absent.json")
    assert missing.value.field == "config"
    broken = tmp_path / "broken.json"
    broken.write_text("{not json", encoding="utf-8")
    with pytest.raises(ValidationError) as info:
        load_config(broken)
    assert "line 1" in str(info.value)


def test_l1_grid():
    grid = l1_grid(2, 2)
    assert len(grid) == 12
    assert (0, 0) not in grid
    assert all(abs(a) + abs(b) <= 2 for a, b in grid)


def test_default_schedule_matches_homogenization_default():
    config = config_from_dict(_raw(experiment="phibar"))
    assert config.estimator.p_schedule == (8, 16, 32)
    assert config.estimator.p_schedule == resolve_quasimorphism("signature").schedule
