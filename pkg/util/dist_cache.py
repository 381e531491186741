from __future__ import annotations

import json
import os
import re
import tempfile
from dataclasses import dataclass
from pathlib import Path

from loguru import logger

from util.stats import BelongingDistribution

_UNSAFE_RE = re.compile(r"[^A-Za-z0-9._-]+")


def _safe(part: str) -> str:
    return _UNSAFE_RE.sub("_", part) or "_"


@dataclass
class DistributionCache:
    """
    Offline belonging distributions on disk:
        <root>/<model_id>/<reference_id>/<metric>-<confighash>.json
    Writes go through a temp file + os.replace, so the last writer wins and readers never see
    a half-written file.
    """

    root: Path

    def __post_init__(self):
        self.root = Path(self.root)

    def path_for(self, model_id: str, reference_id: str, metric: str, config_hash: str) -> Path:
        return self.root / _safe(model_id) / _safe(reference_id) / f"{_safe(metric)}-{_safe(config_hash)}.json"

    def load(self, model_id: str, reference_id: str, metric: str, config_hash: str) -> BelongingDistribution | None:
        path = self.path_for(model_id, reference_id, metric, config_hash)
        if not path.exists():
            return None
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
            return BelongingDistribution.from_dict(data)
        except (json.JSONDecodeError, OSError, TypeError, ValueError) as e:
            logger.warning(f"缓存文件 {path} 读取失败: {e}，将重新估计。")
            return None

    def save(self, dist: BelongingDistribution) -> Path:
        path = self.path_for(dist.model_id, dist.reference_id, dist.metric, dist.inversion_config_hash)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = json.dumps(dist.to_dict(), ensure_ascii=False, indent=2) + "\n"
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".json")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as f:
                f.write(payload)
            os.replace(tmp, path)
        except BaseException:
            Path(tmp).unlink(missing_ok=True)
            raise
        return path
