"""Declarative run configuration, validated before any side effect."""

from __future__ import annotations

from pathlib import Path
from typing import Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .bm25 import Bm25Params
from .dataset import MixSpec, TrainManifest
from .errors import ConfigError
from .gateway import EndpointSpec, Gateway
from .rag import RagConfig, preset
from .synthesis import GENERATION_STAGES, StageBinding, StageConfig

# judging, reranking and reading are repeatable; generation wants diversity
DEFAULT_TEMPERATURE = {**{s: 0.7 for s in GENERATION_STAGES}, "judge": 0.0, "rerank": 0.0, "reader": 0.0}


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class EndpointConfig(_Strict):
    base_url: str
    model: str = ""
    api_key_env: str | None = None
    max_concurrency: int = Field(4, ge=1)
    max_attempts: int = Field(5, ge=1)
    backoff_base: float = Field(0.5, ge=0)
    backoff_cap: float = Field(30.0, ge=0)
    timeout: float = Field(120.0, gt=0)


class StageSettings(_Strict):
    endpoint: str
    temperature: float | None = Field(None, ge=0)
    max_tokens: int = Field(2048, gt=0)
    retries: int = Field(1, ge=0)


class RerankSettings(StageSettings):
    method: Literal["auto", "logprob", "text"] = "auto"
    logprob_top_k: int = Field(5, ge=1, le=20)
    k_in: int = Field(100, ge=1)
    workers: int = Field(1, ge=1)


class SynthesisSettings(_Strict):
    persona_pool: str | None = None
    persona_samples: int = Field(3, ge=1)
    materials_min: int = 3
    materials_max: int = 7
    negatives_min: int = 1
    negatives_max: int = 5
    solution_floor: int = Field(50, ge=0)
    workers: int = Field(1, ge=1)
    judge_workers: int = Field(1, ge=1)


class MixSettings(_Strict):
    seed_pool_count: int = Field(14000, ge=0)
    synth_count: int = Field(6000, ge=0)
    balance: bool = True
    require_traces: bool = False
    system_prompt: str | None = None


class ManifestSettings(_Strict):
    base_model: str = "Qwen/Qwen2.5-7B"
    lora_rank: int = 32
    lora_alpha: int = 64
    learning_rate: float = 6e-5
    batch_size: int = 128
    epochs: int = 5


class RetrievalSettings(_Strict):
    k1: float = 1.5
    b: float = 0.75
    k: int = Field(100, ge=1)
    stopwords: str | None = None


class EvaluationSettings(_Strict):
    metrics: list[str] = ["ndcg@10"]
    paired_metrics: list[str] = ["map@5", "ndcg@5"]


class RagSettings(_Strict):
    preset: Literal["main", "appendix"] = "main"
    retrieve_k: int | None = None
    rerank_k: int | None = None
    context_k: int | None = None
    workers: int = Field(1, ge=1)


class PipelineConfig(_Strict):
    name: str
    seed: int
    output_dir: str = "runs"
    endpoints: dict[str, EndpointConfig]
    stages: dict[str, StageSettings] = {}
    rerank: RerankSettings | None = None
    synthesis: SynthesisSettings = SynthesisSettings()
    mix: MixSettings = MixSettings()
    manifest: ManifestSettings = ManifestSettings()
    retrieval: RetrievalSettings = RetrievalSettings()
    evaluation: EvaluationSettings = EvaluationSettings()
    rag: RagSettings = RagSettings()

    # directory of the config file; relative paths resolve against it
    base_dir: Path = Path(".")

    @field_validator("name")
    @classmethod
    def _name_is_path_safe(cls, v: str) -> str:
        if not v or "/" in v or v.startswith("."):
            raise ValueError("name must be a plain directory name")
        return v

    @field_validator("stages")
    @classmethod
    def _known_stages(cls, v: dict[str, StageSettings]) -> dict[str, StageSettings]:
        known = set(GENERATION_STAGES) | {"judge", "reader"}
        unknown = sorted(set(v) - known)
        if unknown:
            raise ValueError(f"unknown stages {unknown}; known: {sorted(known)}")
        return v

    def resolve(self, p: str | Path) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def run_dir(self) -> Path:
        return self.resolve(self.output_dir) / self.name

    def temperature(self, stage: str) -> float:
        s = self.rerank if stage == "rerank" else self.stages[stage]
        assert s is not None
        return DEFAULT_TEMPERATURE[stage] if s.temperature is None else s.temperature

    def require_stages(self, *stages: str) -> None:
        missing = [s for s in stages if (self.rerank is None if s == "rerank" else s not in self.stages)]
        if missing:
            raise ConfigError(f"{self.name}: no settings for stages {missing}")

    def validate_endpoints(self) -> None:
        refs = {name: s.endpoint for name, s in self.stages.items()}
        if self.rerank is not None:
            refs["rerank"] = self.rerank.endpoint
        for stage, eid in refs.items():
            if eid not in self.endpoints:
                raise ConfigError(f"stage {stage!r} references undefined endpoint {eid!r}")
        for eid, ep in self.endpoints.items():
            if ep.base_url.startswith("mock:"):
                script = self.resolve(ep.base_url[len("mock:"):])
                if not script.is_file():
                    raise ConfigError(f"endpoint {eid!r}: mock script {script} not found")

    # -- builders ------------------------------------------------------------

    def gateway(self) -> Gateway:
        specs = {}
        for eid, ep in self.endpoints.items():
            url = ep.base_url
            if url.startswith("mock:"):
                url = "mock:" + str(self.resolve(url[len("mock:"):]))
            specs[eid] = EndpointSpec(id=eid, base_url=url, **ep.model_dump(exclude={"base_url"}))
        return Gateway(specs)

    def stage_config(self) -> StageConfig:
        self.require_stages(*GENERATION_STAGES)
        bindings = {
            s: StageBinding(self.stages[s].endpoint, self.temperature(s), self.stages[s].max_tokens, self.stages[s].retries)
            for s in GENERATION_STAGES
        }
        syn = self.synthesis
        try:
            return StageConfig(
                bindings,
                materials_min=syn.materials_min,
                materials_max=syn.materials_max,
                negatives_min=syn.negatives_min,
                negatives_max=syn.negatives_max,
                solution_floor=syn.solution_floor,
                persona_samples=syn.persona_samples,
                workers=syn.workers,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def mix_spec(self) -> MixSpec:
        return MixSpec(self.mix.seed_pool_count, self.mix.synth_count, self.mix.balance, self.seed)

    def train_manifest(self, dataset_path: str) -> TrainManifest:
        return TrainManifest(**self.manifest.model_dump(), dataset_path=dataset_path)

    def bm25_params(self) -> Bm25Params:
        try:
            return Bm25Params(self.retrieval.k1, self.retrieval.b)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def stopwords(self) -> frozenset[str] | None:
        if not self.retrieval.stopwords:
            return None
        text = self.resolve(self.retrieval.stopwords).read_text(encoding="utf-8")
        return frozenset(w.strip().lower() for w in text.split() if w.strip())

    def rag_config(self, preset_name: str | None = None) -> RagConfig:
        self.require_stages("reader")
        overrides = {k: v for k, v in (("retrieve_k", self.rag.retrieve_k), ("rerank_k", self.rag.rerank_k), ("context_k", self.rag.context_k)) if v is not None}
        reader = self.stages["reader"]
        try:
            return preset(
                preset_name or self.rag.preset,
                **overrides,
                reader_endpoint=reader.endpoint,
                reader_temperature=self.temperature("reader"),
                reader_max_tokens=reader.max_tokens,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


def load_config(path: str | Path, seed: int | None = None) -> PipelineConfig:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as f:
            raw = yaml.safe_load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a mapping at top level")
    if seed is not None:
        raw["seed"] = seed
    raw.pop("base_dir", None)
    try:
        cfg = PipelineConfig(**raw, base_dir=path.parent.resolve())
    except ValidationError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    cfg.validate_endpoints()
    return cfg
