"""Command-line entry point.

Exit status: 0 on success, 1 on invalid input or usage, 2 on a numerical
abort (NaN/Inf or instability) inside a time or training loop.
"""
from __future__ import annotations

import os

# pin BLAS pools before numpy loads so repeated runs are bit-reproducible
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse  # noqa: E402
import math  # noqa: E402
import sys  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from .config import load_config, pick  # noqa: E402
from .diagnostics import energy_spectrum, slice_export, spectral_error  # noqa: E402
from .errors import NumericalAbort, ValidationError  # noqa: E402
from .fields import CHANNELS, Field3, prolong  # noqa: E402
from .flow import FlowState, cfl_bound, compute_eps, compute_k, compute_re_lambda, init_hit, run  # noqa: E402
from .les import (check_filter, reconstruct_field, run_aposteriori, stamp_filter,  # noqa: E402
                  write_timeseries)
from .losses import LossWeights  # noqa: E402
from .networks import (DiscriminatorConfig, GeneratorConfig, build_discriminator,  # noqa: E402
                       build_generator, load_checkpoint, save_checkpoint)
from .pifd import atomic_write_text, read_pifd, write_pifd  # noqa: E402
from .pipeline import (FilterSpec, apply_filter, extract_subboxes, load_manifest,  # noqa: E402
                       manifest_filter, manifest_records, write_manifest)
from .training import TrainConfig, train_stage1, train_stage2  # noqa: E402


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p):
    p.add_argument("--config", help="key=value configuration file")
    p.add_argument("--seed", type=int, help="random seed")


def _filter_args(p):
    p.add_argument("--kind", choices=("gaussian_spectral", "box_spectral"))
    p.add_argument("--width-cells", type=float, help="filter width in fine-grid spacings")
    p.add_argument("--coarsen", type=int, help="coarsening factor")


def _filter_spec(cfg, args, spacing, default_coarsen=1) -> FilterSpec:
    cells = pick(cfg, "filter.width_cells", args.width_cells, 8.0)
    return FilterSpec(pick(cfg, "filter.kind", args.kind, "gaussian_spectral"), cells * spacing,
                      int(pick(cfg, "filter.coarsen_factor", getattr(args, "coarsen", None),
                               default_coarsen)))


def build_parser() -> Parser:
    parser = Parser(prog="piesrgan", description="PIESRGAN turbulence super-resolution toolkit")
    sub = parser.add_subparsers(dest="command", parser_class=Parser)
    sub.required = True

    p = sub.add_parser("simulate", help="run decaying HIT and write snapshots")
    _common(p)
    p.add_argument("--n", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--dt", type=float)
    p.add_argument("--cfl", type=float)
    p.add_argument("--nu", type=float)
    p.add_argument("--output-every", type=int)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("filter", help="filter DNS snapshots")
    _common(p)
    _filter_args(p)
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("make-dataset", help="write a stage-1 or stage-2 manifest")
    _common(p)
    _filter_args(p)
    p.add_argument("--stage", type=int, choices=(1, 2), required=True)
    p.add_argument("--filtered", nargs="+", help="filtered fields (stage 1)")
    p.add_argument("--targets", nargs="+", help="matching DNS fields (stage 1)")
    p.add_argument("--inputs", nargs="+", help="LES fields (stage 2)")
    p.add_argument("--n-fine", type=int, help="prolong stage-2 inputs to this extent")
    p.add_argument("--box", type=int)
    p.add_argument("--out", required=True, help="manifest path")

    p = sub.add_parser("train", help="train the generator (stage 1 or 2)")
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--stage", type=int, choices=(1, 2), required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--generator", help="initial generator checkpoint")
    p.add_argument("--discriminator", help="initial discriminator checkpoint")
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("reconstruct", help="reconstruct a filtered snapshot")
    _common(p)
    _filter_args(p)
    p.add_argument("--input", required=True)
    p.add_argument("--generator", required=True)
    p.add_argument("--overlap", type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("spectrum", help="shell energy spectrum of a snapshot")
    _common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--fields", choices=("velocity", "scalar", "all"))
    p.add_argument("--out", required=True)

    p = sub.add_parser("a-priori", help="compare DNS, filtered and reconstructed spectra")
    _common(p)
    p.add_argument("--dns", required=True)
    p.add_argument("--filtered", required=True)
    p.add_argument("--recon", help="reconstructed field; otherwise use --generator")
    p.add_argument("--generator")
    p.add_argument("--band", type=int, nargs=2)
    p.add_argument("--out", required=True)

    p = sub.add_parser("les-run", help="a posteriori LES from a DNS snapshot")
    _common(p)
    _filter_args(p)
    p.add_argument("--initial", required=True)
    p.add_argument("--generator", help="closure generator; omit for the unclosed run")
    p.add_argument("--steps", type=int)
    p.add_argument("--dt", type=float)
    p.add_argument("--nu", type=float)
    p.add_argument("--output-every", type=int)
    p.add_argument("--closure-every", type=int)
    p.add_argument("--out", required=True, help="time-series file")

    p = sub.add_parser("slice", help="export a 2-D slice as CSV (and PGM)")
    _common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--axis", choices=("x", "y", "z"), default="z")
    p.add_argument("--index", type=int, required=True)
    p.add_argument("--component", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--pgm")
    return parser


# --------------------------------------------------------------- commands

def _snapshot(state: FlowState) -> Field3:
    return Field3(np.concatenate([state.scalar.data, state.velocity.data]),
                  state.velocity.box_length, state.time, CHANNELS)


def _flow_state(f: Field3, nu: float, schmidt: float = 1.0) -> FlowState:
    if f.components != 4:
        raise ValidationError(f"expected a (z, u, v, w) snapshot, got {f.components} components")
    return FlowState(Field3(f.data[1:4], f.box_length, f.time, CHANNELS[1:]),
                     Field3(f.data[:1], f.box_length, f.time, CHANNELS[:1]), f.time, nu, nu / schmidt)


def cmd_simulate(args, cfg):
    state = init_hit(int(pick(cfg, "solver.n", args.n, 64)), int(pick(cfg, "solver.seed", args.seed, 0)),
                     float(cfg.get("solver.spectrum_peak", 3.0)), float(cfg.get("solver.energy", 0.5)),
                     float(pick(cfg, "solver.nu", args.nu, 0.01)), float(cfg.get("solver.schmidt", 1.0)))
    cfl = float(pick(cfg, "solver.cfl", args.cfl, 0.5))
    dt = pick(cfg, "solver.dt", args.dt)
    dt = 0.8 * cfl_bound(state, cfl) if dt is None else float(dt)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []

    def save(i, st):
        write_pifd(out / f"snap_{i:06d}.pifd", _snapshot(st))
        vals = (st.time, compute_k(st), compute_eps(st), compute_re_lambda(st))
        rows.append(f"{i} " + " ".join(f"{v:.17g}" for v in vals) + "\n")

    run(state, int(pick(cfg, "solver.steps", args.steps, 100)), dt,
        int(pick(cfg, "solver.output_every", args.output_every, 10)), cfl, save)
    atomic_write_text(out / "stats.txt", "# step t k eps re_lambda\n" + "".join(rows))
    print(f"wrote {len(rows)} snapshots to {out} (dt={dt:g})")


def cmd_filter(args, cfg):
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for path in args.inputs:
        f = read_pifd(path)
        spec = _filter_spec(cfg, args, f.spacing)
        target = out / (Path(path).stem + ".filtered.pifd")
        write_pifd(target, apply_filter(f, spec))
        print(f"{path} -> {target} ({spec.kind}, width {spec.width:g})")


def cmd_make_dataset(args, cfg):
    box = int(pick(cfg, "data.box", args.box, 16))
    seed = int(pick(cfg, "data.seed", args.seed, 0))
    records, spec = [], None
    if args.stage == 1:
        if not args.filtered or not args.targets or len(args.filtered) != len(args.targets):
            raise ValidationError("stage 1 needs --filtered and --targets lists of equal length")
        for i, (fp, hp) in enumerate(zip(args.filtered, args.targets)):
            filt, fine = read_pifd(fp), read_pifd(hp)
            spec = _filter_spec(cfg, args, fine.spacing)
            pairs = extract_subboxes(fine, filt, box, seed + i, source=(fp, hp))
            records += manifest_records(pairs, 1)
    else:
        if not args.inputs:
            raise ValidationError("stage 2 needs --inputs")
        out_dir = Path(args.out).resolve().parent
        for i, path in enumerate(args.inputs):
            f = read_pifd(path)
            n_fine = pick(cfg, "data.n_fine", args.n_fine)
            if n_fine is not None and int(n_fine) != f.n:
                f = f.with_data(prolong(f.data, int(n_fine)))
                path = str(out_dir / (Path(path).stem + f".prolonged{int(n_fine)}.pifd"))
                write_pifd(path, f)
            pairs = extract_subboxes(None, f, box, seed + i, source=(path, ""))
            records += manifest_records(pairs, 2)
    write_manifest(args.out, records, spec)
    print(f"wrote {len(records)} stage-{args.stage} records to {args.out}")


def _gen_config(cfg) -> GeneratorConfig:
    d = GeneratorConfig()
    return GeneratorConfig(feature_maps=int(cfg.get("gen.feature_maps", d.feature_maps)),
                           num_rrdb=int(cfg.get("gen.num_rrdb", d.num_rrdb)),
                           db_convs_per_block=int(cfg.get("gen.db_convs_per_block", d.db_convs_per_block)),
                           growth_channels=int(cfg.get("gen.growth_channels", d.growth_channels)),
                           residual_scale=float(cfg.get("gen.residual_scale", d.residual_scale)))


def _disc_config(cfg) -> DiscriminatorConfig:
    d = DiscriminatorConfig()
    return DiscriminatorConfig(base_filters=int(cfg.get("disc.base_filters", d.base_filters)),
                               dense_width=int(cfg.get("disc.dense_width", d.dense_width)),
                               dropout_rate=float(cfg.get("disc.dropout_rate", d.dropout_rate)))


def cmd_train(args, cfg):
    pairs = load_manifest(args.manifest, expect_stage=args.stage)
    seed = int(pick(cfg, "train.seed", args.seed, 0))
    gen = load_checkpoint(args.generator) if args.generator else build_generator(_gen_config(cfg), seed)
    disc = (load_checkpoint(args.discriminator) if args.discriminator
            else build_discriminator(_disc_config(cfg), seed + 1))
    if gen.kind != "generator" or disc.kind != "discriminator":
        raise ValidationError("checkpoint kinds do not match --generator/--discriminator")
    lw = LossWeights()
    weights = LossWeights(*(float(cfg.get(f"loss.beta{i}", v)) for i, v in
                            enumerate((lw.adversarial, lw.pixel, lw.gradient, lw.continuity), 1)))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lr = float(pick(cfg, "train.lr", args.lr, 1e-4))
    every = int(pick(cfg, "train.checkpoint_every", args.checkpoint_every, 0))
    batch = int(pick(cfg, "train.batch_size", args.batch_size, 32))
    max_steps = _opt_int(pick(cfg, "train.max_steps", args.steps))
    epochs = pick(cfg, "train.epochs", args.epochs)
    if epochs is None:
        # a step budget alone implies as many epochs as it takes to spend it
        epochs = 1 if max_steps is None else math.ceil(max_steps / math.ceil(len(pairs) / batch))
    tc = TrainConfig(stage=args.stage, batch_size=batch,
                     subbox=pairs[0].input_box.shape[0],
                     epochs=int(epochs), max_steps=max_steps, seed=seed,
                     gen_learning_rate=lr, disc_learning_rate=float(cfg.get("train.disc_lr", lr)),
                     weights=weights, checkpoint_every=every,
                     checkpoint_dir=str(out / "checkpoints") if every else None,
                     log_path=str(out / "train.log"))
    disc = _fit_disc_box(disc, tc.subbox, cfg) if not args.discriminator else disc
    result = (train_stage1 if args.stage == 1 else train_stage2)(pairs, gen, disc, tc)
    gen = result.generator
    spec = manifest_filter(args.manifest)
    if spec is not None:
        gen = stamp_filter(gen, spec)
    save_checkpoint(out / "gen.ckpt", gen)
    save_checkpoint(out / "disc.ckpt", result.discriminator)
    print(f"stage {args.stage}: {len(result.log)} steps, final loss {result.log[-1]['total']:.6g}")


def _opt_int(v):
    return None if v is None else int(v)


def _fit_disc_box(disc, box, cfg):
    if disc.config.input_box == box:
        return disc
    c = disc.config
    return build_discriminator(DiscriminatorConfig(c.in_channels, c.base_filters, c.num_bn_blocks,
                                                   c.dense_width, c.dropout_rate, box),
                               int(cfg.get("train.seed", 0)) + 1)


def cmd_reconstruct(args, cfg):
    f = read_pifd(args.input)
    gen = load_checkpoint(args.generator)
    check_filter(gen, _filter_spec(cfg, args, f.spacing))
    recon = reconstruct_field(f, gen, int(pick(cfg, "les.overlap", args.overlap, 4)))
    write_pifd(args.out, recon)
    print(f"wrote {args.out}")


def _spectral_part(f: Field3, which: str) -> Field3:
    if which == "all" or f.components != 4:
        return f
    return Field3(f.data[1:4] if which == "velocity" else f.data[:1], f.box_length, f.time)


def cmd_spectrum(args, cfg):
    f = read_pifd(args.input)
    spec = energy_spectrum(_spectral_part(f, args.fields or "velocity"))
    atomic_write_text(args.out, spec.to_text())
    print(f"total {spec.total:.10g} over {len(spec.shells)} shells")


def cmd_a_priori(args, cfg):
    dns, filt = read_pifd(args.dns), read_pifd(args.filtered)
    if args.recon:
        recon = read_pifd(args.recon)
    elif args.generator:
        recon = reconstruct_field(filt, load_checkpoint(args.generator), int(cfg.get("les.overlap", 4)))
    else:
        raise ValidationError("a-priori needs --recon or --generator")
    band = args.band or (2, dns.n // 4)
    lines = [f"# band {band[0]} {band[1]}\n", "# field which error\n"]
    for which in ("velocity", "scalar"):
        ref = energy_spectrum(_spectral_part(dns, which))
        e_f = spectral_error(energy_spectrum(_spectral_part(filt, which)), ref, band)
        e_r = spectral_error(energy_spectrum(_spectral_part(recon, which)), ref, band)
        lines += [f"{which} filtered {e_f:.17g}\n", f"{which} reconstructed {e_r:.17g}\n",
                  f"{which} ratio {e_r / e_f if e_f > 0 else math.inf:.17g}\n"]
    atomic_write_text(args.out, "".join(lines))
    print("".join(lines), end="")


def cmd_les_run(args, cfg):
    nu = float(pick(cfg, "solver.nu", args.nu, 0.01))
    initial = _flow_state(read_pifd(args.initial), nu, float(cfg.get("solver.schmidt", 1.0)))
    spec = _filter_spec(cfg, args, initial.velocity.spacing, default_coarsen=4)
    gen = load_checkpoint(args.generator) if args.generator else None
    dt = pick(cfg, "les.dt", args.dt)
    if dt is None:
        coarse = initial.velocity.spacing * spec.coarsen_factor
        # 40% of the coarse-mesh advective limit, leaving room for closure-driven growth
        dt = 0.2 * coarse / max(np.sqrt(np.sum(initial.velocity.data ** 2, axis=0)).max(), 1e-30)
    res = run_aposteriori(initial, gen, spec, int(pick(cfg, "les.steps", args.steps, 200)), float(dt),
                          int(pick(cfg, "les.output_every", args.output_every, 10)),
                          closure_every=int(pick(cfg, "les.closure_every", args.closure_every, 1)))
    write_timeseries(args.out, res.times, res.k, res.eps)
    print(f"{len(res.times)} rows, k {res.k[0]:.6g} -> {res.k[-1]:.6g}")


def cmd_slice(args, cfg):
    f = read_pifd(args.input)
    slice_export(f, args.axis, args.index, args.out, args.component, args.pgm)
    print(f"wrote {args.out}")


COMMANDS = {"simulate": cmd_simulate, "filter": cmd_filter, "make-dataset": cmd_make_dataset,
            "train": cmd_train, "reconstruct": cmd_reconstruct, "spectrum": cmd_spectrum,
            "a-priori": cmd_a_priori, "les-run": cmd_les_run, "slice": cmd_slice}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(args.config)
        COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 2
    except (ValidationError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
