"""Run manifest: one JSON record per CLI invocation."""

import json
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from pydantic import BaseModel, Field

from replay_engine.config.settings import ExperimentConfig, config_hash

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


class RunManifest(BaseModel):
    """Provenance of a run: command, config, seeds, inputs and outputs."""

    command: str
    config_hash: str
    config: Dict[str, Any]
    seeds: Dict[str, int] = Field(default_factory=dict)
    dataset_paths: List[str] = Field(default_factory=list)
    artifact_version: str = ""
    started_at: str = Field(default_factory=_now)
    finished_at: Optional[str] = None
    outputs: List[str] = Field(default_factory=list)
    status: str = "running"

    @classmethod
    def start(
        cls,
        command: str,
        config: ExperimentConfig,
        seeds: Optional[Dict[str, int]] = None,
        dataset_paths: Optional[List[str]] = None,
    ) -> "RunManifest":
        """Open a manifest for a run that is about to begin."""
        from replay_engine import __version__

        digest = config_hash(config)
        return cls(
            command=command,
            config_hash=digest,
            config=config.model_dump(mode="json"),
            seeds=seeds or {},
            dataset_paths=[str(p) for p in dataset_paths or []],
            artifact_version=f"{__version__}+{digest[:7]}",
        )

    def add_output(self, path: Union[str, Path], out_dir: Union[str, Path]) -> None:
        """Record an output file relative to the run directory."""
        rel = str(Path(path).resolve().relative_to(Path(out_dir).resolve()))
        if rel not in self.outputs:
            self.outputs.append(rel)

    def finish(self, out_dir: Union[str, Path], status: str = "ok") -> Path:
        """Stamp the end time and write manifest.json into out_dir."""
        self.finished_at = _now()
        self.status = status
        out_path = Path(out_dir) / MANIFEST_NAME
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(json.dumps(self.model_dump(mode="json"), indent=2), encoding="utf-8")
        logger.info(f"Wrote manifest {out_path} ({len(self.outputs)} outputs, status={status})")
        return out_path


def read_manifest(out_dir: Union[str, Path]) -> RunManifest:
    """Load manifest.json from a run directory."""
    path = Path(out_dir) / MANIFEST_NAME
    return RunManifest.model_validate(json.loads(path.read_text(encoding="utf-8")))
