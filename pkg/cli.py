#!/usr/bin/env python3
"""
命令行子命令 - learn / fuse / eval / sweep / synth / compare / runs

每个 cmd_* 接收 argparse 的 Namespace，成功时返回 0；
出错时抛出 DataError / NumericalError，由 main.py 映射为退出码。
"""

import argparse
import csv
import io
import logging
import sys
import uuid
from datetime import datetime
from pathlib import Path
from typing import Optional

import numpy as np

from config import Config
from corpus import encode_labels, load_corpus, parse_range
from db_manager import ResultsManager
from dictionary_file import load_dictionary, save_dictionary
from dictionary_learning import coupled_learn, learn_separate, learn_single
from errors import DataError, NumericalError
from fusion import FusionConfig, FusionResult, fuse_images, render_mask
from image_io import atomic_write_bytes, load_image, save_image
from imaging import (gaussian_blur, generate_focal_series, region_circle,
                     region_half_plane, region_wedges, to_grayscale)
from logger_config import print_status_message
from metrics import evaluate, mask_accuracy
from sparse_coding import mutual_coherence
from training_data import load_training_set
from tv_reconstruction import TvParams

logger = logging.getLogger(__name__)

METRIC_FIELDS = ["nmi", "qabf", "ssim", "mse"]
RECORD_FIELDS = ["run_id", "command", "created_at", "image_id", "mode",
                 "param_name", "param_value"] + METRIC_FIELDS + ["mask_accuracy"]
REGIONS = ("half", "circle", "wedges", "mask")
SWEEP_PARAMS = ("omega", "eps", "patch")


# --------------------------- 参数类型 ---------------------------

def positive_float(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"必须为正数: {text}")
    return value


def positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"必须为正整数: {text}")
    return value


def omega_value(text: str) -> float:
    value = float(text)
    if not 0.5 <= value < 1.0:
        raise argparse.ArgumentTypeError(f"omega 必须满足 0.5 <= omega < 1: {text}")
    return value


# --------------------------- 公共工具 ---------------------------

def _new_run_id() -> str:
    return f"{datetime.now():%Y%m%d-%H%M%S}-{uuid.uuid4().hex[:6]}"


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def write_csv(path: Optional[str], fieldnames: list, rows: list):
    """写 CSV（表头总是存在）；path 为空时输出到标准输出"""
    buffer = io.StringIO(newline="")
    writer = csv.DictWriter(buffer, fieldnames=fieldnames, extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow({name: _format(row.get(name)) for name in fieldnames})
    if path:
        atomic_write_bytes(path, buffer.getvalue().encode("utf-8"))
        logger.info(f"结果表已写入: {path}（{len(rows)} 行）")
    else:
        sys.stdout.write(buffer.getvalue())


def _save_rows(args, command: str, rows: list):
    if args.no_db:
        return
    run_id = _new_run_id()
    ResultsManager(args.db).save_records(run_id, command, rows)
    print_status_message(f"指标已写入结果库 {args.db}（run_id={run_id}）", "success")


def _mean(rows: list, name: str) -> Optional[float]:
    values = [row[name] for row in rows if row.get(name) is not None]
    return float(np.mean(values)) if values else None


def _tv_params(args) -> TvParams:
    return TvParams(eta=args.tv_eta, rho=args.tv_rho, gamma=args.tv_gamma,
                    max_iters=args.tv_iters, tol=args.tv_tol)


def _fusion_config(args, dictionary, **overrides) -> FusionConfig:
    """由命令行参数构造 FusionConfig；max_atoms 截断到字典允许的范围"""
    values = dict(
        omega=args.omega, eps=args.eps, patch_side=args.patch, overlap=args.overlap,
        max_atoms=args.max_atoms, tv_enabled=args.tv, tv_params=_tv_params(args),
        workers=args.threads,
    )
    values.update(overrides)
    atoms = dictionary.stacked()
    limit = min(atoms.dim, atoms.size)
    if values["max_atoms"] > limit:
        logger.debug(f"max_atoms {values['max_atoms']} 截断为 {limit}")
        values["max_atoms"] = limit
    return FusionConfig(**values)


def _stalled_planes(result: FusionResult) -> int:
    return sum(1 for r in result.tv_results if not r.converged)


def _check_convergence(args, stalled: int):
    """输出写完后再检查：TV 有平面未收敛时默认以数值错误结束"""
    if not stalled:
        return
    if args.allow_nonconvergence:
        logger.warning(f"TV 重建有 {stalled} 个平面未收敛，已使用目标函数最小的迭代结果")
        return
    raise NumericalError(f"TV 重建有 {stalled} 个平面未收敛（结果已写出，"
                         f"可用 --allow-nonconvergence 忽略）")


def _score(item, result: FusionResult) -> dict:
    report = evaluate(item.sources, result.image, item.reference)
    row = {"image_id": item.stem, **report.as_row()}
    if item.labels is not None:
        try:
            row["mask_accuracy"] = mask_accuracy(result.mask, item.labels)
        except DataError as e:
            logger.warning(f"{item.stem}: 无法计算掩码准确率（{e}），该列留空")
            row["mask_accuracy"] = None
    return row


def _score_corpus(items, dictionary, cfg: FusionConfig) -> tuple[list, dict, int]:
    rows, stalled = [], 0
    for item in items:
        result = fuse_images(item.sources, dictionary, cfg)
        stalled += _stalled_planes(result)
        rows.append(_score(item, result))
    average = {name: _mean(rows, name) for name in METRIC_FIELDS + ["mask_accuracy"]}
    average["images"] = len(rows)
    return rows, average, stalled


# --------------------------- 子命令 ---------------------------

def cmd_learn(args) -> int:
    """从标注的训练区域学习字典并写出 CDL1 文件"""
    ts = load_training_set(args.annotations, args.patch, args.overlap, args.pairs, args.seed)
    learners = {"coupled": coupled_learn, "separate": learn_separate, "single": learn_single}
    dim = 2 * ts.dim if args.mode == "coupled" else ts.dim
    max_atoms = min(args.max_atoms, dim, args.atoms)
    print_status_message(
        f"开始学习 {args.mode} 字典: {len(ts)} 对块, {args.atoms} 个原子, {args.cycles} 个周期",
        "loading")
    dictionary = learners[args.mode](ts, args.atoms, args.cycles, args.eps, max_atoms,
                                     args.seed, args.threads)
    save_dictionary(args.output, dictionary)
    logger.info(f"拼接字典的互相关系数: {mutual_coherence(dictionary.stacked()):.4f}")
    print_status_message(f"字典已保存到 {args.output}", "success")
    return 0


def _mask_path(output: Path) -> Path:
    return output.with_name(f"{output.stem}_mask.png")


def _write_fusion(result: FusionResult, output: Path, mask_output: Path):
    save_image(output, result.image)
    height, width = result.image.shape[:2]
    save_image(mask_output, render_mask(result.mask, height, width) / 255.0)


def cmd_fuse(args) -> int:
    """融合一组源图像，或融合 --corpus 目录下的每一组"""
    dictionary = load_dictionary(args.dict)
    cfg = _fusion_config(args, dictionary)

    if args.corpus:
        out_dir = Path(args.out_dir or args.corpus)
        stalled = 0
        for item in load_corpus(args.corpus):
            result = fuse_images(item.sources, dictionary, cfg)
            stalled += _stalled_planes(result)
            output = out_dir / f"{item.stem}_fused.png"
            _write_fusion(result, output, _mask_path(output))
        print_status_message(f"语料融合结果已写入 {out_dir}", "success")
        _check_convergence(args, stalled)
        return 0

    if not args.inputs or len(args.inputs) < 2 or not args.output:
        raise DataError("需要至少两幅输入图像和 --output，或使用 --corpus")
    sources = [load_image(path) for path in args.inputs]
    result = fuse_images(sources, dictionary, cfg)
    output = Path(args.output)
    _write_fusion(result, output, Path(args.mask) if args.mask else _mask_path(output))
    print_status_message(f"融合结果已写入 {output}（用时 {result.elapsed:.2f}s）", "success")
    _check_convergence(args, _stalled_planes(result))
    return 0


def cmd_eval(args) -> int:
    """计算融合结果的指标，输出 CSV 行"""
    rows = []
    if args.corpus:
        fused_dir = Path(args.fused_dir or args.corpus)
        for item in load_corpus(args.corpus):
            fused = load_image(fused_dir / f"{item.stem}_fused.png")
            report = evaluate(item.sources, fused, item.reference)
            rows.append({"image_id": item.stem, **report.as_row()})
    else:
        if not args.fused or not args.sources or len(args.sources) < 2:
            raise DataError("需要 --fused 和至少两幅 --sources，或使用 --corpus")
        sources = [load_image(path) for path in args.sources]
        reference = load_image(args.reference) if args.reference else None
        report = evaluate(sources, load_image(args.fused), reference)
        rows.append({"image_id": args.id or Path(args.fused).stem, **report.as_row()})

    write_csv(args.csv, ["image_id"] + METRIC_FIELDS, rows)
    _save_rows(args, "eval", rows)
    return 0


def cmd_sweep(args) -> int:
    """在语料上扫描一个参数，每个取值输出一行平均指标"""
    values = parse_range(args.range)
    items = load_corpus(args.corpus)
    if args.param == "omega":
        bad = [v for v in values if not 0.5 <= v < 1.0]
        if bad:
            raise DataError(f"omega 取值超出 [0.5, 1): {bad}")
    if args.param == "patch" and any(v != int(v) or v < 2 for v in values):
        raise DataError("块边长必须是不小于 2 的整数")
    if args.param != "patch" and "{patch}" in args.dict:
        raise DataError("只有扫描 patch 时字典路径才能包含 {patch}")

    fixed = None if "{patch}" in args.dict else load_dictionary(args.dict)
    rows, stalled = [], 0
    for value in values:
        if args.param == "patch":
            d = int(value)
            dictionary = fixed or load_dictionary(args.dict.format(patch=d))
            overrides = {"patch_side": d, "overlap": min(args.overlap, d - 1)}
        else:
            dictionary = fixed
            overrides = {args.param: value}
        cfg = _fusion_config(args, dictionary, **overrides)
        _, average, count = _score_corpus(items, dictionary, cfg)
        stalled += count
        rows.append({"param_name": args.param, "param_value": value, **average})
        logger.info(f"{args.param}={value:g}: NMI={_format(average['nmi'])} "
                    f"Q_AB/F={_format(average['qabf'])}")

    fields = ["param_name", "param_value"] + METRIC_FIELDS + ["mask_accuracy", "images"]
    write_csv(args.csv, fields, rows)
    _save_rows(args, "sweep", [{**row, "image_id": "*"} for row in rows])
    _check_convergence(args, stalled)
    return 0


def cmd_compare(args) -> int:
    """用多个字典（coupled / separate / single）融合同一语料并比较平均指标"""
    items = load_corpus(args.corpus)
    rows, stalled = [], 0
    for path in args.dicts:
        dictionary = load_dictionary(path)
        cfg = _fusion_config(args, dictionary)
        _, average, count = _score_corpus(items, dictionary, cfg)
        stalled += count
        rows.append({"dictionary": Path(path).name, "mode": dictionary.mode, **average})
        print_status_message(
            f"{Path(path).name} ({dictionary.mode}): NMI={_format(average['nmi'])} "
            f"Q_AB/F={_format(average['qabf'])} 掩码准确率={_format(average['mask_accuracy'])}",
            "info")

    fields = ["dictionary", "mode"] + METRIC_FIELDS + ["mask_accuracy", "images"]
    write_csv(args.csv, fields, rows)
    _save_rows(args, "compare", [{**row, "image_id": row["dictionary"]} for row in rows])
    _check_convergence(args, stalled)
    return 0


def cmd_runs(args) -> int:
    """列出结果库中的指标记录，或删除一次运行"""
    manager = ResultsManager(args.db)
    if args.delete:
        count = manager.delete_run(args.delete)
        if not count:
            raise DataError(f"结果库中没有运行 {args.delete}")
        print_status_message(f"已删除运行 {args.delete}（{count} 条记录）", "success")
        return 0
    records = manager.list_run(args.run) if args.run else manager.list_all(args.command_name)
    write_csv(args.csv, RECORD_FIELDS, records)
    return 0


def _synth_labels(args, height: int, width: int) -> np.ndarray:
    if args.region == "half":
        return np.where(region_half_plane(height, width), 0, 1)
    if args.region == "circle":
        return np.where(region_circle(height, width), 0, 1)
    if args.region == "wedges":
        return region_wedges(height, width, args.k)
    if not args.mask_file:
        raise DataError("--region mask 需要 --mask-file")
    region = to_grayscale(load_image(args.mask_file)) > 0.5
    if region.shape != (height, width):
        raise DataError(f"掩码文件尺寸 {region.shape} 与图像 {(height, width)} 不一致")
    if region.all() or not region.any():
        raise DataError("掩码文件必须同时包含前景和背景")
    return np.where(region, 0, 1)


def cmd_synth(args) -> int:
    """由清晰图像合成多聚焦语料，并写出可直接用于 learn 的标注文件"""
    out_dir = Path(args.out_dir)
    annotations = []
    for path in args.inputs:
        sharp = load_image(path)
        stem = Path(path).stem
        height, width = sharp.shape[:2]
        labels = _synth_labels(args, height, width)
        k = int(labels.max()) + 1
        series = generate_focal_series(sharp, args.sigma, labels, k)

        for index, image in enumerate(series):
            save_image(out_dir / f"{stem}_src{index}.png", image)
        save_image(out_dir / f"{stem}_truth.png", encode_labels(labels, k) / 255.0)
        save_image(out_dir / f"{stem}_ref.png", sharp)
        save_image(out_dir / f"{stem}_blur.png", gaussian_blur(sharp, args.sigma))
        annotations.append(f"{stem}_ref.png 0 0 {width} {height} focused")
        annotations.append(f"{stem}_blur.png 0 0 {width} {height} blurred")
        logger.info(f"合成 {stem}: {k} 幅多聚焦图像, sigma={args.sigma}")

    sidecar = out_dir / "annotations.txt"
    atomic_write_bytes(sidecar, ("\n".join(annotations) + "\n").encode("utf-8"))
    print_status_message(f"合成语料已写入 {out_dir}（{len(args.inputs)} 幅源图像）", "success")
    return 0


# --------------------------- 参数解析 ---------------------------

def _add_patch_args(parser):
    parser.add_argument('--patch', type=positive_int, default=Config.PATCH_SIDE, help='块边长 d')
    parser.add_argument('--overlap', type=int, default=Config.OVERLAP, help='相邻块重叠像素数')
    parser.add_argument('--eps', type=positive_float, default=Config.EPS, help='OMP 残差容差')
    parser.add_argument('--max-atoms', type=positive_int, default=Config.MAX_ATOMS,
                        help='每个块最多使用的原子数')
    parser.add_argument('--threads', type=positive_int, default=Config.THREADS,
                        help='编码线程数（环境变量 CDL_THREADS）')


def _add_fusion_args(parser):
    _add_patch_args(parser)
    parser.add_argument('--omega', type=omega_value, default=Config.OMEGA,
                        help='聚焦子空间权重 0.5 <= omega < 1')
    parser.add_argument('--tv', action='store_true', help='启用 TV 全局重建')
    parser.add_argument('--tv-eta', type=float, default=Config.TV_ETA, help='TV 正则化权重')
    parser.add_argument('--tv-rho', type=positive_float, default=Config.TV_RHO, help='ADMM 惩罚参数')
    parser.add_argument('--tv-gamma', type=positive_float, default=Config.TV_GAMMA,
                        help='对偶更新松弛因子 (0, 2]')
    parser.add_argument('--tv-iters', type=positive_int, default=Config.TV_MAX_ITERS,
                        help='ADMM 最大迭代次数')
    parser.add_argument('--tv-tol', type=positive_float, default=Config.TV_TOL, help='相对残差容差')
    parser.add_argument('--allow-nonconvergence', action='store_true',
                        help='TV 未收敛时仍以退出码 0 结束（默认写出结果后以退出码 3 结束）')


def _add_db_args(parser):
    parser.add_argument('--db', default=Config.DB_PATH, help='结果数据库路径')
    parser.add_argument('--no-db', action='store_true', help='不写入结果数据库')


class UsageErrorParser(argparse.ArgumentParser):
    """参数错误时以退出码 1 结束"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: 错误: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = UsageErrorParser(
        prog="cdlfusion",
        description="CDLFusion 基于耦合字典稀疏表示的多聚焦图像融合",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
使用示例:
  %(prog)s synth sharp/*.png --out-dir corpus --region half
  %(prog)s learn corpus/annotations.txt --output coupled.cdl --mode coupled
  %(prog)s fuse a.png b.png --dict coupled.cdl --output fused.png --tv
  %(prog)s eval --corpus corpus --csv table.csv
  %(prog)s sweep --corpus corpus --dict coupled.cdl --param omega --range 0.5:0.98:0.04

环境变量配置:
  export CDL_THREADS=4
  export LOG_LEVEL=DEBUG
        """
    )
    parser.add_argument('--log-level', default=Config.LOG_LEVEL, help='日志级别')
    parser.add_argument('--log-file', default=Config.LOG_FILE, help='日志文件（默认取 LOG_FILE，未设置时只输出到控制台）')
    parser.add_argument('--quiet', action='store_true', help='不打印启动横幅')
    sub = parser.add_subparsers(dest='command', required=True, parser_class=UsageErrorParser)

    learn = sub.add_parser('learn', help='学习字典')
    learn.add_argument('annotations', nargs='+', help='标注文件（path x y w h label）')
    learn.add_argument('--output', required=True, help='输出 CDL1 字典文件')
    learn.add_argument('--mode', choices=('coupled', 'separate', 'single'), default='coupled')
    learn.add_argument('--atoms', type=positive_int, default=Config.ATOMS, help='每个子字典的原子数 M')
    learn.add_argument('--cycles', type=positive_int, default=Config.CYCLES, help='K-SVD 周期数')
    learn.add_argument('--pairs', type=positive_int, default=Config.TRAIN_PAIRS, help='训练块对数上限')
    learn.add_argument('--seed', type=int, default=Config.SEED)
    _add_patch_args(learn)
    learn.set_defaults(handler=cmd_learn)

    fuse = sub.add_parser('fuse', help='融合图像')
    fuse.add_argument('inputs', nargs='*', help='源图像（至少两幅）')
    fuse.add_argument('--dict', required=True, help='CDL1 字典文件')
    fuse.add_argument('--output', help='融合结果路径（.png / .pgm）')
    fuse.add_argument('--mask', help='决策掩码 PNG 路径（默认 <output>_mask.png）')
    fuse.add_argument('--corpus', help='融合语料目录中的每一组图像')
    fuse.add_argument('--out-dir', help='语料模式的输出目录（默认语料目录）')
    fuse.add_argument('--seed', type=int, default=Config.SEED)
    _add_fusion_args(fuse)
    fuse.set_defaults(handler=cmd_fuse)

    evaluate_cmd = sub.add_parser('eval', help='计算融合指标')
    evaluate_cmd.add_argument('--fused', help='融合结果')
    evaluate_cmd.add_argument('--sources', nargs='+', help='源图像')
    evaluate_cmd.add_argument('--reference', help='全清晰参考图像（可选）')
    evaluate_cmd.add_argument('--id', help='图像名（默认取融合结果文件名）')
    evaluate_cmd.add_argument('--corpus', help='语料目录')
    evaluate_cmd.add_argument('--fused-dir', help='<stem>_fused.png 所在目录（默认语料目录）')
    evaluate_cmd.add_argument('--csv', help='输出 CSV（默认标准输出）')
    evaluate_cmd.add_argument('--seed', type=int, default=Config.SEED)
    _add_db_args(evaluate_cmd)
    evaluate_cmd.set_defaults(handler=cmd_eval)

    sweep = sub.add_parser('sweep', help='参数扫描')
    sweep.add_argument('--corpus', required=True, help='语料目录')
    sweep.add_argument('--dict', required=True,
                       help='CDL1 字典文件；扫描 patch 时可用 {patch} 占位，如 dict_{patch}.cdl')
    sweep.add_argument('--param', choices=SWEEP_PARAMS, required=True)
    sweep.add_argument('--range', required=True, help='start:stop:step（包含 stop）')
    sweep.add_argument('--csv', help='输出 CSV（默认标准输出）')
    sweep.add_argument('--seed', type=int, default=Config.SEED)
    _add_fusion_args(sweep)
    _add_db_args(sweep)
    sweep.set_defaults(handler=cmd_sweep)

    synth = sub.add_parser('synth', help='合成多聚焦语料')
    synth.add_argument('inputs', nargs='+', help='清晰源图像')
    synth.add_argument('--out-dir', required=True, help='输出目录')
    synth.add_argument('--sigma', type=positive_float, default=Config.BLUR_SIGMA, help='高斯模糊 sigma')
    synth.add_argument('--region', choices=REGIONS, default='half', help='清晰区域形状')
    synth.add_argument('--k', type=positive_int, default=3, help='wedges 区域的扇形数')
    synth.add_argument('--mask-file', help='--region mask 使用的二值掩码图像')
    synth.add_argument('--seed', type=int, default=Config.SEED)
    synth.set_defaults(handler=cmd_synth)

    compare = sub.add_parser('compare', help='比较多个字典的融合效果')
    compare.add_argument('--corpus', required=True, help='语料目录')
    compare.add_argument('--dicts', nargs='+', required=True, help='CDL1 字典文件')
    compare.add_argument('--csv', help='输出 CSV（默认标准输出）')
    compare.add_argument('--seed', type=int, default=Config.SEED)
    _add_fusion_args(compare)
    _add_db_args(compare)
    compare.set_defaults(handler=cmd_compare)

    runs = sub.add_parser('runs', help='查看或删除结果库中的记录')
    runs.add_argument('--command', dest='command_name', choices=('eval', 'sweep', 'compare'),
                      help='只列出某个子命令写入的记录')
    runs.add_argument('--run', help='只列出一次运行（run_id）')
    runs.add_argument('--delete', metavar='RUN_ID', help='删除一次运行的所有记录')
    runs.add_argument('--csv', help='输出 CSV（默认标准输出）')
    runs.add_argument('--db', default=Config.DB_PATH, help='结果数据库路径')
    runs.set_defaults(handler=cmd_runs)

    return parser

