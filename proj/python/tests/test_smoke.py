# Copyright The david-edge Authors
# SPDX-License-Identifier: Apache-2.0

import pytest

import david


def test_speechnet1_timing():
    report = david.analyze(david.reference_speechnet1_graph(channels=8), fps=40.0)
    out = next(o for o in report["outputs"] if o["id"] == "posteriors")
    assert out["receptive_field_frames"] == 133
    assert out["lookahead_frames"] == 52


def test_interval_matches_probe():
    g = david._core.reference_speechnet1_graph(4, 0)
    assert david.dependency_interval(g, "posteriors", 60, 300) == david.impulse_probe(g, "posteriors", 60, 300)


def test_power_model():
    assert david.estimate_power_mw(1.375e12) == pytest.approx(50.0)


def test_vocabulary_and_tone_round_trip():
    vocab = david.asr_vocabulary()
    assert len(vocab) == 29 and vocab[0] == "<blank>"
    audio = david.tone_audio("hello david")
    assert david.transcribe_tone(audio) == "hello david"
    assert david.transcribe_tone(audio, chunk_frames=3) == "hello david"


def test_ctc_worked_example():
    import math

    lp = [[math.log(0.4), math.log(0.6)], [math.log(0.5), math.log(0.5)]]
    assert david.ctc_forward_score(lp, [1]) == pytest.approx(0.8, abs=1e-7)


def test_mulaw_and_crc():
    assert david.mulaw_encode(-1.0) == 0
    assert david.mulaw_encode(1.0) == 255
    assert abs(david.mulaw_decode(david.mulaw_encode(0.3)) - 0.3) < 0.025
    assert david.crc16_ccitt(b"123456789") == 0x29B1


def test_synthesize_length():
    samples = david.synthesize("hi")
    assert len(samples) % 400 == 0 and len(samples) > 0


def test_scenario_and_errors():
    report = david.run_scenario(david.silent_script(60.0))
    assert report["energy_mj"]["hub"] == pytest.approx(0.5 * 60.0)
    with pytest.raises(david.DavidError) as err:
        david.run_scenario({"stimuli": [{"t": 1, "type": "nope"}]})
    assert err.value.kind == "ScriptError"
    with pytest.raises(david.DavidError) as err:
        david.battery_life_hours(0.0, 7.4)
    assert err.value.kind == "ZeroPower"
