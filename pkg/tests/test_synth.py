import dataclasses
import filecmp
import math
from collections import defaultdict
from zoneinfo import ZoneInfo

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sensetraits.featurize import FEATURE_NAMES, featurize_cohort
from sensetraits.ingest import local_date, parse_bfi, parse_daily_metrics, parse_events
from sensetraits.synth import (
    NOISE_LEVELS, PlantedEffect, SynthConfig, gen_cohort, intended_features, score_roundtrip_check,
)
from sensetraits.targets import TRAITS


def correlations(sc):
    """Pearson r of every non-constant feature with every trait, keyed (feature, trait)."""
    vecs = {v.user_id: v.values for v in featurize_cohort(sc.cohort)}
    users = sorted(vecs)
    truth = {s.user_id: s.scores for s in sc.truth}
    out = {}
    for name in FEATURE_NAMES:
        x = np.array([vecs[u][name] for u in users])
        ok = ~np.isnan(x)
        if ok.sum() < 3 or np.ptp(x[ok]) == 0:
            continue
        for t in TRAITS:
            y = np.array([truth[u][t] for u in users], dtype=float)
            out[(name, t)] = float(np.corrcoef(x[ok], y[ok])[0, 1])
    return out


def test_null_effects_inside_chance_band():
    n = 144
    band = 2.5 / math.sqrt(n)
    per_pair = defaultdict(list)
    exceed, perm_exceed, total = 0, 0, 0
    rng = np.random.default_rng(0)
    for seed in range(10):
        sc = gen_cohort(SynthConfig.preset("medium", seed=seed).null())
        for key, r in correlations(sc).items():
            per_pair[key].append(r)
            exceed += abs(r) >= band
            total += 1
        # permutation oracle: the same features against shuffled trait vectors
        shuffled = list(sc.truth)
        scores = [s.scores for s in shuffled]
        rng.shuffle(scores)
        perm = dataclasses.replace(sc, truth=[dataclasses.replace(s, scores=v) for s, v in zip(shuffled, scores)])
        perm_exceed += sum(abs(r) >= band for r in correlations(perm).values())
    # every feature-trait pair sits inside the band across seeds
    assert all(np.median(np.abs(rs)) < band for rs in per_pair.values())
    # single-draw exceedances happen at the permutation-null rate (about 1.2% two-sided)
    assert exceed / total <= 0.03
    assert abs(exceed - perm_exceed) / total <= 0.015


def test_single_planted_effect():
    effect = PlantedEffect("EXT", "stationary_duration", "weekday", -300.0, sigma=50.0)
    sc = gen_cohort(SynthConfig(effects=(effect,), noise=NOISE_LEVELS["low"], seed=3))
    r = correlations(sc)[("stationary_duration_weekday", "EXT")]
    assert r <= -0.8
    assert sc.manifest["effects"][0]["feature"] == "stationary_duration_weekday"


def test_same_seed_same_bytes(tmp_path):
    cfg = SynthConfig(n_users=12, n_days=21, seed=5)
    a = gen_cohort(cfg).write(tmp_path / "a")
    b = gen_cohort(cfg).write(tmp_path / "b")
    for k in a:
        assert filecmp.cmp(a[k], b[k], shallow=False)
    c = gen_cohort(dataclasses.replace(cfg, seed=6)).write(tmp_path / "c")
    assert not filecmp.cmp(a["events"], c["events"], shallow=False)


def test_written_files_parse_back(tmp_path):
    sc = gen_cohort(SynthConfig(n_users=10, n_days=14, seed=1))
    paths = sc.write(tmp_path)
    assert parse_events(paths["events"].read_text()) == sc.cohort.events
    assert parse_daily_metrics(paths["metrics"].read_text()) == sc.cohort.metrics
    assert parse_bfi(paths["bfi"].read_text()) == sc.cohort.responses


def test_roundtrip_passes_and_detects_tampering():
    sc = gen_cohort(SynthConfig(n_users=10, n_days=14, seed=2))
    assert score_roundtrip_check(sc.cohort, None, sc.truth).passed
    victim = sc.cohort.responses[4]
    items = list(victim.items)
    items[0] = 1 if items[0] != 1 else 2
    tampered = list(sc.cohort.responses)
    tampered[4] = dataclasses.replace(victim, items=tuple(items))
    res = score_roundtrip_check(dataclasses.replace(sc.cohort, responses=tampered), None, sc.truth)
    assert not res.passed and res.mismatched == [victim.user_id]


def test_roundtrip_empty_cohort():
    sc = gen_cohort(SynthConfig(n_users=10, n_days=14, seed=2))
    with pytest.raises(ValueError, match="empty cohort"):
        score_roundtrip_check(dataclasses.replace(sc.cohort, responses=[]), None, sc.truth)


def test_noise_free_features_match_intended_means():
    sc = gen_cohort(SynthConfig(n_users=10, n_days=21, noise=0.0, seed=4))
    got = {v.user_id: v.values for v in featurize_cohort(sc.cohort)}
    for sim in sc.users:
        for name, want in intended_features(sim).items():
            have = got[sim.user_id][name]
            if math.isnan(want):
                assert math.isnan(have), name
            else:
                assert have == pytest.approx(want, rel=0, abs=1e-6), name


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(sorted(NOISE_LEVELS)))
def test_daily_durations_valid(seed, noise):
    sc = gen_cohort(SynthConfig.preset(noise, seed=seed, n_users=10, n_days=14))
    zone = ZoneInfo(sc.cohort.tz)
    per_day = defaultdict(float)
    for e in sc.cohort.events:
        assert e.duration >= 0
        per_day[(e.user_id, local_date(e.start, zone))] += e.duration
    assert max(per_day.values()) <= 86400
    for m in sc.cohort.metrics:
        assert m.distance_m >= 0 and m.steps >= 0 and m.longest_untouched_s >= 0


def test_config_validation():
    with pytest.raises(ValueError, match="n_users"):
        SynthConfig(n_users=5)
    with pytest.raises(ValueError, match="n_days"):
        SynthConfig(n_days=10)
    with pytest.raises(ValueError, match="cannot carry"):
        PlantedEffect("EXT", "sleep_duration", "weekday", 1.0)
    with pytest.raises(ValueError, match="sigma"):
        PlantedEffect("EXT", "wake_hour", "weekday", 1.0, sigma=-1.0)


def test_config_dict_roundtrip():
    cfg = SynthConfig.preset("low", seed=9)
    assert SynthConfig.from_dict(cfg.to_dict()) == cfg
    assert SynthConfig.from_dict({"noise": "high"}).noise == NOISE_LEVELS["high"]
