import argparse
import json
import sys
from pathlib import Path

from loguru import logger

from harness import (
    FILTER_STRENGTHS,
    SCENARIO_NAMES,
    FilterParams,
    HarnessConfig,
    ZooConfig,
    apply_filter,
    build_zoo,
    default_scenario,
    run_scenario,
)
from inversion import InversionConfig, invert
from models.checkpoint import load_model, save_model
from models.training import TrainConfig, generate, sample_inputs, train_decoder
from origin_attribution import OriginAttribution
from util.errors import ArtifactMissingError
from util.image_io import load_tensor, save_tensor, write_pnm
from util.report import FORMATS, ConfusionReport, emit_report, load_reports
from util.synth import KINDS, SynthSpec, load_dataset, save_dataset, synth_dataset
from util.tensor_core import Rng

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_MISSING = 2


class UsageError(Exception):
    pass


class ArgumentParser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for missing artifacts here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--metric", type=str, default="mse", choices=["mse", "mae", "ssim"], help="重建损失的距离度量（默认 mse）")
    common.add_argument("--alpha", type=float, default=0.05, help="Grubbs 检验显著性水平（默认 0.05）")
    common.add_argument("--restarts", type=int, default=8, help="输入逆向的随机重启次数（默认 8）")
    common.add_argument("--steps", type=int, default=400, help="每次重启的 Adam 步数（默认 400）")
    common.add_argument("--lr", type=float, default=0.05, help="输入逆向的学习率（默认 0.05）")
    common.add_argument("--seed", type=int, default=0, help="随机种子（默认 0）")
    common.add_argument("--n", type=int, default=100, help="估计 belonging 分布时生成的图像数 N（默认 100）")
    common.add_argument("--cache-dir", type=str, default=None, help="belonging 分布缓存目录（默认 <workdir>/cache）")
    common.add_argument("--workdir", type=str, default="workspace", help="模型/数据集工作目录（默认 workspace）")
    common.add_argument("--out", type=str, default=None, help="输出路径")
    common.add_argument("--num-workers", type=int, default=1, help="并行线程数（默认 1）")
    common.add_argument("--no-timing", action="store_true", help="所有耗时记为 0，使报告逐字节可复现")
    common.add_argument("--quiet", action="store_true", help="关闭进度条")
    common.add_argument("--verbose", action="store_true", help="输出 DEBUG 日志")
    return common


def build_parser() -> ArgumentParser:
    common = _common_parser()
    parser = ArgumentParser(description="Origin attribution for white-box generative models", prog="origin-attribution")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)

    p = sub.add_parser("synth-data", parents=[common], help="生成合成数据集")
    p.add_argument("--kind", type=str, default="gaussian-blobs", choices=list(KINDS))
    p.add_argument("--shape", type=int, nargs=3, default=[1, 8, 8], metavar=("C", "H", "W"))
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--count", type=int, default=256)

    p = sub.add_parser("train", parents=[common], help="在数据集上训练解码器")
    p.add_argument("--data", type=str, required=True, help="数据集目录")
    p.add_argument("--architecture", type=str, default="mlp", choices=["grid", "linear", "mlp"])
    p.add_argument("--d-z", type=int, default=8)
    p.add_argument("--hidden", type=int, nargs=2, default=[64, 64])
    p.add_argument("--num-classes", type=int, default=None, help="条件模型的类别数（默认无条件）")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--train-lr", type=float, default=0.01)
    p.add_argument("--model-id", type=str, default=None)

    sub.add_parser("prepare-zoo", parents=[common], help="构建所有场景需要的数据集与模型")

    p = sub.add_parser("generate", parents=[common], help="用模型生成图像（RNTZ 张量文件）")
    p.add_argument("--model", type=str, required=True)
    p.add_argument("--count", type=int, default=1)

    p = sub.add_parser("invert", parents=[common], help="对单张图像做输入逆向")
    p.add_argument("image", type=str)
    p.add_argument("--model", type=str, required=True)

    p = sub.add_parser("belonging-dist", parents=[common], help="离线估计 belonging 分布")
    p.add_argument("--model", type=str, required=True)
    p.add_argument("--reference", type=str, default=None, help="参考模型（默认 <workdir>/models/ref）")
    p.add_argument("--no-calibration", action="store_true")

    p = sub.add_parser("attribute", parents=[common], help="判断图像是否属于模型")
    p.add_argument("image", type=str, nargs="+")
    p.add_argument("--model", type=str, required=True)
    p.add_argument("--reference", type=str, default=None)
    p.add_argument("--no-calibration", action="store_true")
    p.add_argument("--filter", action="store_true", help="先对图像施加暖色滤镜（自适应攻击）")
    p.add_argument("--filter-strength", type=float, default=FILTER_STRENGTHS[0], help="滤镜混合强度，0~1")

    p = sub.add_parser("run-scenario", parents=[common], help="运行评估场景")
    p.add_argument("name", type=str, choices=list(SCENARIO_NAMES))
    p.add_argument("--target", type=str, default=None, help="目标模型名（<workdir>/models 下）")
    p.add_argument("--contrast", type=str, default=None, help="对照来源：data:<name> 或 model:<name>")
    p.add_argument("--count", type=int, default=100, help="belonging 与 non-belonging 各多少张（默认 100）")
    p.add_argument("--fractions", type=float, nargs="+", default=None)
    p.add_argument("--strengths", type=float, nargs="+", default=None, help="adaptive_filter 的滤镜强度（可多个）")

    p = sub.add_parser("report", parents=[common], help="汇总报告为 csv/json/html")
    p.add_argument("inputs", type=str, nargs="+", help="report.json / report.csv 文件")
    p.add_argument("--format", type=str, default="csv", choices=list(FORMATS))

    p = sub.add_parser("export-pgm", parents=[common], help="把张量图像导出为 PGM/PPM")
    p.add_argument("tensor", type=str)
    p.add_argument("--model", type=str, default=None, help="同时导出该模型的逆向重建图像（并排）")
    return parser


def _inversion_config(args) -> InversionConfig:
    return InversionConfig(
        restarts=args.restarts,
        steps_per_restart=args.steps,
        learning_rate=args.lr,
        seed=args.seed,
    )


def _harness_config(args) -> HarnessConfig:
    return HarnessConfig(
        workdir=Path(args.workdir),
        out=Path(args.out or "results"),
        cache_dir=Path(args.cache_dir) if args.cache_dir else None,
        metric=args.metric,
        alpha=args.alpha,
        n=args.n,
        inversion=_inversion_config(args),
        seed=args.seed,
        num_workers=args.num_workers,
        record_timing=not args.no_timing,
        progress=not args.quiet,
    )


def _require_out(args) -> Path:
    if not args.out:
        raise UsageError(f"{args.command} 需要 --out")
    return Path(args.out)


def _attribution(args, model_path: str, reference_path: str | None) -> OriginAttribution:
    model = load_model(model_path)
    calibrated = not args.no_calibration
    reference = None
    if calibrated:
        reference = load_model(reference_path or Path(args.workdir) / "models" / "ref")
    return OriginAttribution(
        model,
        reference,
        args.metric,
        _inversion_config(args),
        args.alpha,
        args.n,
        sample_seed=args.seed,
        cache_dir=args.cache_dir or Path(args.workdir) / "cache",
        num_workers=args.num_workers,
        calibrated=calibrated,
        record_timing=not args.no_timing,
        progress=not args.quiet,
    )


def _write_json(payload, out: str | None) -> None:
    text = json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_synth_data(args) -> int:
    spec = SynthSpec(args.kind, tuple(args.shape), args.classes, args.count, args.seed)
    out = save_dataset(synth_dataset(spec), _require_out(args))
    logger.info(f"dataset {spec.dataset_id} written to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    out = _require_out(args)
    dataset = load_dataset(args.data)
    cfg = TrainConfig(
        args.architecture,
        args.d_z,
        dataset.image_shape,
        args.num_classes,
        tuple(args.hidden),
        model_id=args.model_id,
    )
    model = train_decoder(cfg, dataset, Rng(args.seed), args.epochs, args.train_lr, progress=not args.quiet)
    save_model(model, out)
    logger.info(f"model {model.model_id} written to {out}")
    return EXIT_OK


def cmd_prepare_zoo(args) -> int:
    build_zoo(args.workdir, ZooConfig(seed=args.seed), progress=not args.quiet)
    return EXIT_OK


def cmd_generate(args) -> int:
    out = _require_out(args)
    model = load_model(args.model)
    inputs = sample_inputs(model, args.count, Rng(args.seed))
    for i, image in enumerate(generate(model, inputs)):
        save_tensor(image, out / f"probe-{i:03d}.rntz")
    logger.info(f"{args.count} images from {model.model_id} written to {out}")
    return EXIT_OK


def cmd_invert(args) -> int:
    model = load_model(args.model)
    result = invert(model, load_tensor(args.image), args.metric, _inversion_config(args), args.num_workers)
    payload = result.to_dict()
    if args.no_timing:
        payload["wall_time"] = 0.0
    _write_json(payload, args.out)
    return EXIT_OK


def cmd_belonging_dist(args) -> int:
    oa = _attribution(args, args.model, args.reference)
    dist = oa.estimate_belonging_distribution(Rng(args.seed))
    _write_json(dist.to_dict(), args.out)
    return EXIT_OK


def cmd_attribute(args) -> int:
    oa = _attribution(args, args.model, args.reference)
    # enumerable models are decided exactly, without a distribution
    dist = oa.estimate_belonging_distribution(Rng(args.seed)) if oa.model.differentiable else None
    params = FilterParams.warm_tint(oa.model.image_shape[0], args.filter_strength) if args.filter else None
    probes = []
    for path in args.image:
        x = load_tensor(path)
        probes.append((path, apply_filter(x, params) if params else x))
    verdicts = oa.attribute_many(dist, probes)
    lines = "".join(v.to_json_line() + "\n" for v in verdicts)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(lines)
    else:
        sys.stdout.write(lines)
    return EXIT_OK


def cmd_run_scenario(args) -> int:
    scenario = default_scenario(
        args.name,
        target=args.target,
        contrast=args.contrast,
        belonging_count=args.count,
        other_count=args.count,
        fractions=tuple(args.fractions) if args.fractions else None,
        strengths=tuple(args.strengths) if args.strengths else None,
    )
    run_scenario(scenario, _harness_config(args))
    return EXIT_OK


def cmd_report(args) -> int:
    reports: list[ConfusionReport] = []
    for path in args.inputs:
        if not Path(path).exists():
            raise ArtifactMissingError(path, "report file")
        reports.extend(load_reports(path))
    out = emit_report(reports, _require_out(args), args.format)
    logger.info(f"{len(reports)} reports written to {out}")
    return EXIT_OK


def cmd_export_pgm(args) -> int:
    x = load_tensor(args.tensor)
    images = [x]
    if args.model:
        model = load_model(args.model)
        result = invert(model, x, args.metric, _inversion_config(args), args.num_workers)
        images.append(model.forward(result.best_input))
        logger.info(f"reconstruction loss {result.best_loss:.6g}")
    out = write_pnm(images, _require_out(args))
    logger.info(f"image written to {out}")
    return EXIT_OK


COMMANDS = {
    "synth-data": cmd_synth_data,
    "train": cmd_train,
    "prepare-zoo": cmd_prepare_zoo,
    "generate": cmd_generate,
    "invert": cmd_invert,
    "belonging-dist": cmd_belonging_dist,
    "attribute": cmd_attribute,
    "run-scenario": cmd_run_scenario,
    "report": cmd_report,
    "export-pgm": cmd_export_pgm,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logger.remove()
    logger.add(sys.stderr, level="DEBUG" if args.verbose else "INFO")
    try:
        return COMMANDS[args.command](args)
    except ArtifactMissingError as e:
        logger.error(str(e))
        return EXIT_MISSING
    except (UsageError, ValueError) as e:
        logger.error(str(e))
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
