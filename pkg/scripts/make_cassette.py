"""Regenerate the shipped mock cassette.

Re-run whenever simulator behaviour changes, otherwise replay will miss.
"""

import sys
from pathlib import Path

from tcpllm.harness import ExperimentConfig, run_experiment
from tcpllm.llmclient import Cassette, MockBackend, RecordingBackend
from tcpllm.mockmodel import RuleResponder

OUT = Path(__file__).resolve().parents[1] / "src" / "tcpllm" / "cassettes" / "llm_g_static_mock.jsonl"


def main() -> int:
    cfg = ExperimentConfig(modes=["TcpLlmG"], duration_s=120.0, seed=0)
    cas = Cassette(OUT)
    client = RecordingBackend(MockBackend(RuleResponder()), cas, clock=lambda: "2026-01-01T00:00:00+00:00")
    bundle = run_experiment(cfg, client)
    cas.save()
    print(f"{len(cas)} entries, {len(bundle.decisions)} decisions -> {OUT}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
