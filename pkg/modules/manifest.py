# Arquivo: modules/manifest.py

"""
Manifesto de execução: tudo o que é preciso para reproduzir um artefato
(conjunto, flags de pré-processamento, modelo, treino, ranqueamento, semente e
versão da ferramenta). Não registra horários, para que execuções idênticas
gerem arquivos idênticos.
"""

from dataclasses import dataclass, field
from typing import Optional

from modules import __version__

MANIFEST_FORMAT = "recency-manifest"
MANIFEST_VERSION = 1


@dataclass
class RunManifest:
    command: str
    dataset_id: str = ""
    preprocessing: dict = field(default_factory=dict)
    model_spec: Optional[dict] = None
    train_config: Optional[dict] = None
    ranking_config: Optional[dict] = None
    seed: Optional[int] = None
    tool_version: str = __version__
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "format": MANIFEST_FORMAT,
            "version": MANIFEST_VERSION,
            "command": self.command,
            "dataset_id": self.dataset_id,
            "preprocessing": self.preprocessing,
            "model_spec": self.model_spec,
            "train_config": self.train_config,
            "ranking_config": self.ranking_config,
            "seed": self.seed,
            "tool_version": self.tool_version,
            "inputs": self.inputs,
            "outputs": self.outputs,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunManifest":
        if data.get("format") != MANIFEST_FORMAT:
            raise ValueError(f"Formato de manifesto desconhecido: {data.get('format')!r}")
        return cls(
            command=data["command"],
            dataset_id=data.get("dataset_id", ""),
            preprocessing=data.get("preprocessing", {}),
            model_spec=data.get("model_spec"),
            train_config=data.get("train_config"),
            ranking_config=data.get("ranking_config"),
            seed=data.get("seed"),
            tool_version=data.get("tool_version", __version__),
            inputs=data.get("inputs", {}),
            outputs=data.get("outputs", {}),
        )
