import csv
import html
import json
import os
from dataclasses import dataclass
from pathlib import Path

CSV_COLUMNS = ["scenario", "tp", "fp", "fn", "tn", "acc", "mean_ms"]
FORMATS = ("csv", "json", "html")

framework = """
<!DOCTYPE HTML>
<html>
<head>
  <meta charset="utf-8">
  <style>
    .report-wrapper {
      border-radius: 16px;
      padding: 24px 28px;
      background: linear-gradient(135deg, rgba(66,133,244,0.12), rgba(219,68,55,0.08));
      font-family: 'Helvetica Neue', Arial, sans-serif;
    }
    .report-wrapper h2 {
      margin: 0 0 12px 0;
      font-size: 22px;
      color: #1f2937;
      border-bottom: 2px solid rgba(59,130,246,0.2);
      padding-bottom: 8px;
    }
    table.confusion {
      border-collapse: collapse;
      width: 100%;
      background: rgba(255,255,255,0.85);
    }
    table.confusion th, table.confusion td {
      border: 1px solid #ddd;
      padding: 8px 12px;
      text-align: right;
      font-size: 14px;
      color: #333;
    }
    table.confusion td:first-child, table.confusion th:first-child {
      text-align: left;
    }
  </style>
</head>
<body>
<div class="report-wrapper">
    __CONTENT__
</div>
</body>
</html>
"""


@dataclass
class ConfusionReport:
    scenario: str
    tp: int
    fp: int
    fn: int
    tn: int
    mean_ms: float = 0.0

    def __post_init__(self):
        for name in ("tp", "fp", "fn", "tn"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} 不能为负")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def acc(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else 0.0

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "tn": self.tn,
            "acc": self.acc,
            "mean_ms": self.mean_ms,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ConfusionReport":
        return cls(
            str(data["scenario"]),
            int(data["tp"]),
            int(data["fp"]),
            int(data["fn"]),
            int(data["tn"]),
            float(data.get("mean_ms", 0.0)),
        )

    @classmethod
    def from_labels(cls, scenario: str, labels: list[bool], predicted: list[bool], mean_ms: float = 0.0):
        """labels/predicted: True = belonging (positive)."""
        tp = sum(1 for y, p in zip(labels, predicted, strict=True) if y and p)
        fn = sum(1 for y, p in zip(labels, predicted, strict=True) if y and not p)
        fp = sum(1 for y, p in zip(labels, predicted, strict=True) if not y and p)
        tn = sum(1 for y, p in zip(labels, predicted, strict=True) if not y and not p)
        return cls(scenario, tp, fp, fn, tn, mean_ms)


def _render_html(reports: list[ConfusionReport]) -> str:
    rows = [
        "<h2>Origin attribution results</h2>",
        '<table class="confusion">',
        "  <tr>" + "".join(f"<th>{c}</th>" for c in ["Scenario", "TP", "FP", "FN", "TN", "Acc", "ms / image"]) + "</tr>",
    ]
    for r in reports:
        rows.append(
            "  <tr>"
            f"<td>{html.escape(r.scenario)}</td><td>{r.tp}</td><td>{r.fp}</td><td>{r.fn}</td><td>{r.tn}</td>"
            f"<td>{r.acc * 100:.1f}%</td><td>{r.mean_ms:.1f}</td>"
            "</tr>"
        )
    rows.append("</table>")
    return framework.replace("__CONTENT__", "\n".join(rows))


def emit_report(reports: list[ConfusionReport], path: str | os.PathLike, fmt: str = "csv") -> Path:
    if not reports:
        raise ValueError("报告列表为空")
    if fmt not in FORMATS:
        raise ValueError(f"未知的报告格式：{fmt}（可选 {', '.join(FORMATS)}）")
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if fmt == "csv":
            with open(path, "w", encoding="utf-8", newline="") as f:
                writer = csv.writer(f)
                writer.writerow(CSV_COLUMNS)
                for r in reports:
                    writer.writerow([r.scenario, r.tp, r.fp, r.fn, r.tn, f"{r.acc:.3f}", f"{r.mean_ms:.3f}"])
        elif fmt == "json":
            payload = [r.to_dict() for r in reports]
            path.write_text(json.dumps(payload, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
        else:
            path.write_text(_render_html(reports), encoding="utf-8")
    except OSError as e:
        raise OSError(f"无法写入报告 {path}: {e}") from e
    return path


def load_reports(path: str | os.PathLike) -> list[ConfusionReport]:
    path = Path(path)
    if path.suffix == ".csv":
        with open(path, encoding="utf-8", newline="") as f:
            return [ConfusionReport.from_dict(row) for row in csv.DictReader(f)]
    data = json.loads(path.read_text(encoding="utf-8"))
    if isinstance(data, dict):
        data = data.get("reports", [data])
    return [ConfusionReport.from_dict(d) for d in data]
