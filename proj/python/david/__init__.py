# Copyright The david-edge Authors
# SPDX-License-Identifier: Apache-2.0
"""Python front end for the david-edge native core."""

import json

from . import _core
from ._core import (
    DavidError,
    asr_vocabulary,
    battery_life_hours,
    crc16_ccitt,
    ctc_forward_score,
    dependency_interval,
    estimate_power_mw,
    impulse_probe,
    mulaw_decode,
    mulaw_encode,
    synthesize,
    tone_audio,
    transcribe_tone,
)

__all__ = [
    "DavidError",
    "analyze",
    "asr_vocabulary",
    "battery_life_hours",
    "crc16_ccitt",
    "ctc_forward_score",
    "default_registry",
    "dependency_interval",
    "duty_cycle_script",
    "estimate_power_mw",
    "impulse_probe",
    "mulaw_decode",
    "mulaw_encode",
    "reference_speechnet1_graph",
    "run_scenario",
    "silent_script",
    "synthesize",
    "tone_audio",
    "transcribe_tone",
]


def _text(obj):
    return obj if isinstance(obj, str) else json.dumps(obj)


def analyze(graph, fps=0.0, budget_mw=50.0, tops_per_watt=55.0):
    """Static analysis report for a graph given as a dict or JSON text."""
    return json.loads(_core.analyze(_text(graph), fps, budget_mw, tops_per_watt))


def reference_speechnet1_graph(channels=64, seed=0):
    return json.loads(_core.reference_speechnet1_graph(channels, seed))


def default_registry():
    return json.loads(_core.default_registry())


def run_scenario(script, seed=0):
    """Runs a scenario script (dict or JSON text) and returns the report."""
    return json.loads(_core.run_scenario(_text(script), seed))


def duty_cycle_script(days=1):
    return json.loads(_core.duty_cycle_script(days))


def silent_script(seconds=3600.0):
    return json.loads(_core.silent_script(seconds))
