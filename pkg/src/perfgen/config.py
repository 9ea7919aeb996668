"""Run configuration: validation, serialization, and backend construction."""

from __future__ import annotations

import os
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path

from perfgen.dataset import Benchmark
from perfgen.llm import LiveBackend, ReplayBackend
from perfgen.pipeline import STRATEGIES, CorrectnessFlow
from perfgen.sandbox import ExecLimits

API_KEY_ENV = "PERFGEN_API_KEY"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    corpus: str
    benchmark: str = Benchmark.CUSTOM.value
    strategies: list[str] = field(default_factory=lambda: ["perfcodegen"])
    k: int = 1
    runs_per_test: int = 12
    wall_timeout_s: float = 10.0
    memory_bytes: int = 1 << 30
    output_cap_bytes: int = 1 << 20
    float_tolerance: float = 1e-6
    backend: str = "replay"  # replay | live
    transcript: str | None = None
    base_url: str | None = None
    model: str | None = None
    nucleus_temperature: float = 0.8
    nucleus_top_p: float = 0.95
    correctness_flow: str | None = None  # override; None keeps each strategy's default
    worker_cap: int = 1
    out_dir: str = "runs/latest"
    seed: int = 0
    shim: str | None = None

    def validate(self) -> None:
        if not Path(self.corpus).exists():
            raise ConfigError(f"corpus file {self.corpus!r} does not exist")
        try:
            Benchmark(self.benchmark)
        except ValueError:
            raise ConfigError(f"unknown benchmark {self.benchmark!r}") from None
        if self.k < 1:
            raise ConfigError("k must be at least 1")
        if self.runs_per_test < 3:
            raise ConfigError("runs per test must be at least 3")
        if self.wall_timeout_s <= 0:
            raise ConfigError("wall timeout must be positive")
        if self.worker_cap < 1:
            raise ConfigError("worker cap must be at least 1")
        if not self.strategies:
            raise ConfigError("at least one strategy is required")
        for name in self.strategies:
            if name not in STRATEGIES:
                raise ConfigError(
                    f"unknown strategy {name!r}; known: {', '.join(sorted(STRATEGIES))}"
                )
        if self.correctness_flow is not None:
            try:
                CorrectnessFlow(self.correctness_flow)
            except ValueError:
                raise ConfigError(f"unknown correctness flow {self.correctness_flow!r}") from None
        if self.backend == "replay":
            if not self.transcript:
                raise ConfigError("replay backend requires a transcript path")
            if not Path(self.transcript).exists():
                raise ConfigError(f"transcript {self.transcript!r} does not exist")
        elif self.backend == "live":
            if not self.base_url or not self.model:
                raise ConfigError("live backend requires base url and model name")
        else:
            raise ConfigError(f"unknown backend kind {self.backend!r}")

    def limits(self) -> ExecLimits:
        return ExecLimits(
            wall_timeout_s=self.wall_timeout_s,
            memory_bytes=self.memory_bytes,
            output_cap_bytes=self.output_cap_bytes,
            runs_per_test=self.runs_per_test,
            float_tolerance=self.float_tolerance,
        )

    def build_backend(self):
        if self.backend == "replay":
            return ReplayBackend.from_file(self.transcript)
        return LiveBackend(
            base_url=self.base_url,
            model=self.model,
            api_key=os.environ.get(API_KEY_ENV, ""),
            rng=random.Random(self.seed),
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(raw: dict) -> "RunConfig":
        return RunConfig(**raw)
