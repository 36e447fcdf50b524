"""``equilcast`` command line.

Exit status: 0 on success, 1 on a domain error (one JSON line on stderr),
2 on a usage error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import datahub, ensemble, metrics, neural, plots, spectra
from .errors import EquilcastError

log = logging.getLogger("equilcast")


class UsageError(Exception):
    pass


def _pair(text, cast=float, sep=":"):
    try:
        a, b = text.split(sep)
        return cast(a), cast(b)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO{sep}HI, got {text!r}") from None


def _int_list(text):
    try:
        return tuple(int(x) for x in text.split(",") if x)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _existing(path, kind="file"):
    p = Path(path)
    ok = p.is_file() if kind == "file" else p.is_dir()
    if not ok:
        raise UsageError(f"{kind} not found: {path}")
    return p


def _read_json(path):
    with open(_existing(path)) as fh:
        return json.load(fh)


def _dump(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_rifts(a):
    sdir = _existing(a.spectra, "dir")
    dark = spectra.read_spectrum_csv(_existing(a.dark))
    ref = spectra.read_spectrum_csv(_existing(a.reference))
    files = sorted(p for p in sdir.glob("*.csv") if p.name != "times.csv")
    if not files:
        raise UsageError(f"no spectrum CSVs in {sdir}")
    tfile = sdir / "times.csv"
    if tfile.exists():
        with open(tfile, newline="") as fh:
            rows = list(csv.DictReader(fh))
        tmap = {r["file"]: float(r["t_seconds"]) for r in rows}
        missing = [f.name for f in files if f.name not in tmap]
        if missing:
            raise UsageError(f"{tfile}: no time for {missing[0]}")
        times = np.array([tmap[f.name] for f in files])
    else:
        times = np.arange(len(files)) * a.interval_s
    eots = []
    for f in files:
        raw = spectra.read_spectrum_csv(f)
        refl = spectra.calibrate_reflectance(raw, dark, ref)
        eots.append(spectra.compute_eot(refl, a.window, a.zero_pad))
    series = spectra.EotSeries(times, np.array(eots))
    curve = spectra.build_response_curve(series, a.id or sdir.name, a.concentration, "experimental")
    out = datahub.ensure_dir(a.out)
    datahub.save_corpus(datahub.Corpus([curve]), out)
    with open(out / "eot.csv", "w") as fh:
        fh.write("t_seconds,eot_nm\n")
        for t, e in zip(series.times_s, series.eot_nm):
            fh.write(f"{float(t)!r},{float(e)!r}\n")
    print(json.dumps({"id": curve.id, "n": len(curve), "eot0_nm": float(series.eot_nm[0]),
                      "final_response": curve.final}))


def cmd_simulate(a):
    from .simkit import DEFAULT_DISTRIBUTION, ParameterDistribution, generate_corpus
    dist = ParameterDistribution.from_dict(_read_json(a.dist)) if a.dist else DEFAULT_DISTRIBUTION
    corpus, meta = generate_corpus(a.n, a.seed, dist, n_steps=a.steps, duration_h=a.duration_h,
                                   snr_range=a.snr, jobs=a.jobs)
    out = datahub.ensure_dir(a.out)
    datahub.save_corpus(corpus, out, extra_manifest=meta)
    print(json.dumps({"curves": len(corpus), "out": str(out)}))


def _fit_job(args):
    from .simkit import fit_params_to_curve
    curve, restarts, iterations, seed = args
    r = fit_params_to_curve(curve, restarts=restarts, iterations=iterations, seed=seed)
    return curve.id, r


def cmd_fit_params(a):
    from .simkit import fit_param_distribution
    corpus = datahub.load_corpus(_existing(a.curves, "dir"))
    jobs = [(c, a.restarts, a.iterations, a.seed + i) for i, c in enumerate(corpus.curves)]
    if a.jobs > 1:
        with ProcessPoolExecutor(a.jobs) as ex:
            results = list(ex.map(_fit_job, jobs))
    else:
        results = [_fit_job(j) for j in jobs]
    fits = {cid: r for cid, r in results}
    dist = fit_param_distribution([r.params for r in fits.values()])
    doc = dist.to_dict()
    doc["fits"] = [{"id": cid, "mse": r.mse, "params": r.params.to_dict()} for cid, r in fits.items()]
    out = Path(a.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _dump(doc, out)
    print(json.dumps({"fits": len(fits), "out": str(out)}))


def cmd_fit_isotherm(a):
    from .simkit import fit_isotherm
    corpus = datahub.load_corpus(_existing(a.curves, "dir"))
    pts = [(c.concentration_mg_per_ml, plots.equilibrium_response(c)) for c in corpus.curves]
    fit = fit_isotherm(pts)
    out = Path(a.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _dump(fit.to_dict(), out)
    plots.write_isotherm(corpus.curves, out.with_suffix(".csv"), fit)
    print(json.dumps(fit.to_dict()))


def _configs(a):
    net = neural.NetworkConfig.from_dict(_read_json(a.net_config)) if a.net_config else \
        neural.NetworkConfig(a.layers, sequence_length=a.steps)
    if a.train_config:
        tcfg = neural.TrainConfig.from_dict(_read_json(a.train_config))
    else:
        tcfg = neural.TrainConfig(epochs=a.epochs, batch_size=a.batch_size, learning_rate=a.lr,
                                  lr_schedule=a.lr_schedule, min_learning_rate=min(a.min_lr, a.lr))
    return net, tcfg


def _prepared(a):
    corpus = datahub.load_corpus(_existing(a.curves, "dir"))
    datahub.prepare_corpus(corpus, a.split_seed if a.split_seed is not None else a.seed)
    return corpus


def _train_pool(corpus, a, m):
    net, tcfg = _configs(a)
    stats = corpus.normalizer
    train = corpus.split("train")
    val = corpus.split("validation")
    lengths = {len(c) for c in train}
    if lengths != {net.sequence_length}:
        net = neural.NetworkConfig(net.lstm_layer_sizes, net.input_dim, lengths.pop() if len(
            lengths) == 1 else net.sequence_length, net.variance_floor)
    Xtr = stats.forward(datahub.stack_curves(train))
    Xva = stats.forward(datahub.stack_curves(val)) if val else None
    model = ensemble.train_ensemble(Xtr, net, tcfg, m, a.seed, val_X=Xva, normalizer=stats,
                                    train_ids=[c.id for c in train], jobs=a.jobs)
    return model, tcfg


def _policy_for(model, curves):
    X = model.normalizer.forward(datahub.stack_curves(curves))
    mu, var = ensemble.predict_batch(model, X)
    return metrics.default_policy(mu, var, curves[0].times_s)


def cmd_train(a):
    out = Path(a.out)
    corpus = _prepared(a)
    model, tcfg = _train_pool(corpus, a, a.ensemble_size)
    ensemble.save_ensemble(model, out)
    val = corpus.split("validation")
    if val:
        _dump(_policy_for(model, val).to_dict(), out / "policy.json")
    _dump({"train_config": tcfg.to_dict(), "splits": corpus.splits,
           "members": [lg.to_dict() for lg in model.logs]}, out / "training_log.json")
    print(json.dumps({"members": len(model), "out": str(out)}))


def _load_policy(a, model_dir):
    if a.policy:
        return metrics.StoppingPolicy.from_dict(_read_json(a.policy))
    p = Path(model_dir) / "policy.json"
    return metrics.StoppingPolicy.from_dict(json.loads(p.read_text())) if p.exists() else None


def cmd_predict(a):
    mdir = _existing(a.model, "dir")
    model = ensemble.load_ensemble(mdir)
    curve = datahub.read_curve_csv(_existing(a.curve))
    policy = _load_policy(a, mdir)
    norm = model.normalizer
    fc = ensemble.predict_stream(model, norm.forward(curve.response))
    mu_raw = norm.inverse(fc.mu_star)
    var_raw = fc.var_star * norm.span ** 2
    decided = None
    for j, t in enumerate(curve.times_s):
        if policy is not None and decided is None:
            d = metrics.stopping_decision(curve.times_s[:j + 1], fc.mu_star[:j + 1],
                                          fc.var_star[:j + 1], policy)
            if d.returned:
                decided = (float(t), float(mu_raw[j]))
        print(json.dumps({"t_s": float(t), "mu": float(mu_raw[j]), "var": float(var_raw[j]),
                          "decision": "returned" if decided else "pending",
                          "t_returned_s": decided[0] if decided else None}))
    if decided:
        final = {"final_decision": "returned", "t_returned_s": decided[0], "value": decided[1]}
    elif policy is None:
        final = {"final_decision": "no_policy", "t_returned_s": None, "value": float(mu_raw[-1])}
    else:
        final = {"final_decision": "invalid", "t_returned_s": None,
                 "cutoff_s": float(min(policy.max_cutoff_s, curve.times_s[-1]))}
    print(json.dumps(final))


def _eval_curves(a, corpus):
    if a.split == "all":
        return corpus.curves
    if corpus.splits:
        return corpus.split(a.split)
    return corpus.curves


def cmd_evaluate(a):
    mdir = _existing(a.model, "dir")
    model = ensemble.load_ensemble(mdir)
    corpus = datahub.load_corpus(_existing(a.curves, "dir"))
    curves = _eval_curves(a, corpus)
    if not curves:
        raise UsageError(f"no curves in split {a.split!r}")
    policy = _load_policy(a, mdir)
    records, summary = metrics.evaluate_dataset(model, curves, policy, a.reference)
    out = datahub.ensure_dir(a.out)
    _dump({"records": [r.to_dict() for r in records], "summary": summary}, out / "report.json")
    X = model.normalizer.forward(datahub.stack_curves(curves))
    mu, var = ensemble.predict_batch(model, X)
    norm = model.normalizer
    traces = [(c.id, c.times_s, c.response, norm.inverse(mu[k]), var[k] * norm.span ** 2)
              for k, c in enumerate(curves)]
    plots.emit_plots({"curves": curves, "traces": traces, "summary": summary}, out)
    print(json.dumps({k: summary[k] for k in ("n_curves", "n_defined", "mean_foi", "median_foi",
                                               "n_invalid_stops")}))


def cmd_sweep(a):
    out = datahub.ensure_dir(a.out)
    corpus = _prepared(a)
    pool, _ = _train_pool(corpus, a, max(a.sizes))
    val = corpus.split("validation")
    if not val:
        raise UsageError("corpus has no validation split")
    rows = metrics.ensemble_size_sweep(pool, val, list(a.sizes), a.reference)
    _dump(rows, out / "sweep.json")
    plots.write_sweep(rows, out / "sweep.csv")
    for r in rows:
        print(json.dumps(r))


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_training_args(p):
    p.add_argument("--curves", required=True, help="corpus directory (manifest.json + CSVs)")
    p.add_argument("--seed", type=int, required=True, help="master seed")
    p.add_argument("--split-seed", type=int, help="seed for the stratified split (default: --seed)")
    p.add_argument("--layers", type=_int_list, default=(50, 500), help="LSTM widths, e.g. 16,64")
    p.add_argument("--steps", type=int, default=250, help="sequence length")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--lr-schedule", choices=("constant", "cosine"), default="constant")
    p.add_argument("--min-lr", type=float, default=1e-5, help="floor of the cosine schedule")
    p.add_argument("--net-config", help="NetworkConfig JSON (overrides --layers/--steps)")
    p.add_argument("--train-config", help="TrainConfig JSON (overrides --epochs/--batch-size/--lr)")
    p.add_argument("--out", required=True)


def build_parser():
    ap = argparse.ArgumentParser(
        prog="equilcast",
        description="Forecast sensor equilibrium responses with probabilistic LSTM ensembles.")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    ap.add_argument("--jobs", type=int, default=1, help="worker processes (1 = bit-reproducible)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rifts", help="spectra -> EOT series -> response curve")
    p.add_argument("--spectra", required=True, help="directory of spectrum CSVs, one per timestep")
    p.add_argument("--dark", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--window", type=_pair, default=spectra.DEFAULT_WINDOW_NM, help="LO:HI in nm")
    p.add_argument("--zero-pad", type=int, default=8)
    p.add_argument("--interval-s", type=float, default=13 * 3600 / 249,
                   help="sampling interval when the directory has no times.csv")
    p.add_argument("--id")
    p.add_argument("--concentration", type=float, default=0.0, help="mg/mL")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rifts)

    p = sub.add_parser("simulate", help="generate a noisy simulated corpus")
    p.add_argument("--dist", help="ParameterDistribution JSON (default: built-in)")
    p.add_argument("--n", type=int, default=260)
    p.add_argument("--steps", type=int, default=250)
    p.add_argument("--duration-h", type=float, default=13.0)
    p.add_argument("--snr", type=_pair, default=(2.0, 100.0), help="LO:HI, sampled log-uniform")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit-params", help="fit pore parameters per curve, then their distribution")
    p.add_argument("--curves", required=True)
    p.add_argument("--restarts", type=int, default=5)
    p.add_argument("--iterations", type=int, default=150)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit_params)

    p = sub.add_parser("fit-isotherm", help="Redlich-Peterson fit of equilibrium responses")
    p.add_argument("--curves", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit_isotherm)

    p = sub.add_parser("train", help="train an ensemble")
    _add_training_args(p)
    p.add_argument("--ensemble-size", type=int, default=15)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="streaming forecast for one curve")
    p.add_argument("--model", required=True)
    p.add_argument("--curve", required=True)
    p.add_argument("--policy", help="StoppingPolicy JSON (default: the model's policy.json)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="t90 / FOI report on a corpus split")
    p.add_argument("--model", required=True)
    p.add_argument("--curves", required=True)
    p.add_argument("--split", default="test", choices=list(datahub.SPLITS) + ["all"])
    p.add_argument("--policy")
    p.add_argument("--reference", default="measured", choices=metrics.REFERENCES)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="mean/median FOI against ensemble size")
    _add_training_args(p)
    p.add_argument("--sizes", type=_int_list, default=(1, 5, 10, 15, 20, 25))
    p.add_argument("--reference", default="measured", choices=metrics.REFERENCES)
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None):
    ap = build_parser()
    a = ap.parse_args(argv)   # exits with status 2 on usage errors
    logging.basicConfig(level=logging.WARNING - 10 * min(a.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if a.jobs < 1:
        ap.error("--jobs must be >= 1")
    try:
        a.func(a)
    except UsageError as exc:
        ap.print_usage(sys.stderr)
        print(f"equilcast: error: {exc}", file=sys.stderr)
        return 2
    except (EquilcastError, ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        msg = str(exc) if not isinstance(exc, KeyError) else f"missing key {exc}"
        print(json.dumps({"error": type(exc).__name__, "message": msg}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
