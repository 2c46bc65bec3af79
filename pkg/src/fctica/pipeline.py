"""Directory-level pipeline steps behind the command-line interface.

Layout under ``out_dir``::

    study/        manifest.txt, group maps, per-subject truths
    priors/       spatial template, FC training set, IW and pChol priors
    fits/<m>/     per-method fits, one directory per model length and subject
    posterior/<m> FC credible intervals per subject (VB methods)
    metrics/      CSV tables

Each step writes into a hidden sibling directory and renames it into place
only after every file is complete.
"""
import contextlib
import hashlib
import json
import logging
import os
import shutil
import tempfile
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import evaluate as ev
from ._utils import correlation
from .container import read_container, read_matrix, write_container
from .exceptions import ConvergenceError, DataError
from .fc_prior import FcSampleSet, IwPrior, build_pchol_model, fit_iw_prior, sample_pchol
from .posterior import fc_credible_intervals, sample_posterior_a
from .regression import dual_regression, tica_em
from .simulate import StudyConfig, SyntheticSubject, build_study
from .templates import FcTrainingSet, SpatialTemplate, summarize_sessions, templates_from_summaries
from .vb import VbFit, VbOptions, VbState, run_vb

logger = logging.getLogger("fctica")

POSTERIOR_BLOCKS = ("mean", "median", "ci_lo", "ci_hi", "significant")
VB_METHODS = ("vb1", "vb2")


# ---------------------------------------------------------------------------
# small I/O helpers


@contextlib.contextmanager
def atomic_dir(final):
    """Yield a temp directory that replaces ``final`` only on success."""
    final = os.path.abspath(final)
    parent = os.path.dirname(final)
    os.makedirs(parent, exist_ok=True)
    tmp = tempfile.mkdtemp(dir=parent, prefix=f".tmp-{os.path.basename(final)}-")
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    old = None
    if os.path.exists(final):
        old = tempfile.mkdtemp(dir=parent, prefix=f".old-{os.path.basename(final)}-")
        os.rmdir(old)
        os.replace(final, old)
    os.replace(tmp, final)
    if old:
        shutil.rmtree(old, ignore_errors=True)


def write_kv(path, values):
    with open(path, "w") as fh:
        for k in sorted(values):
            v = values[k]
            fh.write(f"{k} = {repr(v) if isinstance(v, float) else v}\n")


def read_kv(path):
    out = {}
    with open(path) as fh:
        for line in fh:
            if "=" in line:
                k, v = (s.strip() for s in line.split("=", 1))
                out[k] = v
    return out


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def tree_digests(root):
    """``{relative path: sha256}`` for every file below ``root``."""
    out = {}
    for d, _, files in os.walk(root):
        for f in files:
            p = os.path.join(d, f)
            out[os.path.relpath(p, root)] = file_digest(p)
    return dict(sorted(out.items()))


def pmap(fn, items, threads=1):
    """Ordered map, optionally over a thread pool."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _path(cfg, *parts):
    return os.path.join(cfg.out_dir, *parts)


def _sub(i):
    return f"sub-{i:03d}"


# ---------------------------------------------------------------------------
# study


def study_config(cfg):
    return StudyConfig(
        grid=cfg.grid, Q=cfg.Q, n_bumps=cfg.n_bumps, n_train=cfg.n_train, n_test=cfg.n_test,
        T_total=cfg.T_total, T_model=cfg.T_model, snr=cfg.snr, fc_df=cfg.fc_df,
        tc_model=cfg.tc_model, phi=cfg.phi, fwhm=cfg.fwhm, sd_scale=cfg.sd_scale,
        sd_floor=cfg.sd_floor, intensity=cfg.intensity, seed=cfg.study_seed,
    )


def simulate(cfg, threads=1):
    """Write the simulated study; returns the manifest path."""
    study = build_study(study_config(cfg))
    final = _path(cfg, "study")
    with atomic_dir(final) as tmp:
        write_container(os.path.join(tmp, "group_maps.ftim"), study.generating.mean)
        write_container(os.path.join(tmp, "generating_sd.ftim"), study.generating.sd)
        jobs = [("train", i, s) for i, s in enumerate(study.train)]
        jobs += [("test", i, s) for i, s in enumerate(study.test)]

        def save(job):
            split, i, s = job
            d = os.path.join(tmp, split, _sub(i))
            os.makedirs(d)
            write_container(os.path.join(d, "S_true.ftim"), s.S_true)
            write_container(os.path.join(d, "A_true.ftim"), s.A_true)
            write_container(os.path.join(d, "fc_true.ftim"), s.FC_true)
            write_kv(
                os.path.join(d, "subject.txt"),
                {"sigma_e": float(s.sigma_e), "noise_seed": s.noise_seed, "split": s.split},
            )
            if cfg.write_data:
                write_container(os.path.join(d, "Y.ftim"), s.data())

        pmap(save, jobs, threads)
        manifest = dict(study.config.as_dict())
        manifest["grid"] = "x".join(str(g) for g in manifest["grid"])
        manifest["V"] = study.generating.V
        write_kv(os.path.join(tmp, "manifest.txt"), manifest)
    logger.info("study: %d train, %d test subjects", cfg.n_train, cfg.n_test)
    return os.path.join(final, "manifest.txt")


def load_subjects(cfg, split):
    root = _path(cfg, "study", split)
    if not os.path.isdir(root):
        raise DataError(f"{root} not found; run `fctica simulate` first")
    subjects = []
    for name in sorted(os.listdir(root)):
        d = os.path.join(root, name)
        meta = read_kv(os.path.join(d, "subject.txt"))
        subjects.append(
            SyntheticSubject(
                S_true=read_matrix(os.path.join(d, "S_true.ftim")),
                FC_true=read_matrix(os.path.join(d, "fc_true.ftim")),
                A_true=read_matrix(os.path.join(d, "A_true.ftim")),
                sigma_e=float(meta["sigma_e"]),
                noise_seed=int(meta["noise_seed"]),
                split=int(meta["split"]),
            )
        )
    return subjects


def load_group_maps(cfg):
    return read_matrix(_path(cfg, "study", "group_maps.ftim"))


# ---------------------------------------------------------------------------
# priors


def estimate_priors(cfg, threads=1):
    """Template and FC priors from the training subjects."""
    S0 = load_group_maps(cfg)
    train = load_subjects(cfg, "train")
    # one subject's sessions at a time; only the DR summaries are kept
    summaries = pmap(lambda s: summarize_sessions(s.test_retest(), S0), train, threads)
    template, fc_train = templates_from_summaries(summaries)
    iw = fit_iw_prior(fc_train)
    model = build_pchol_model(fc_train, n_perm=cfg.n_perm, seed=cfg.prior_seed)
    samples = sample_pchol(model, cfg.K, seed=cfg.prior_seed + 1)
    final = _path(cfg, "priors")
    with atomic_dir(final) as tmp:
        write_container(os.path.join(tmp, "template_mean.ftim"), template.mean)
        write_container(os.path.join(tmp, "template_var.ftim"), template.var)
        write_container(os.path.join(tmp, "fc_train.ftim"), fc_train.samples)
        write_container(os.path.join(tmp, "iw_psi0.ftim"), iw.Psi0)
        write_kv(
            os.path.join(tmp, "iw.txt"),
            {"nu0": float(iw.nu0), "maximally_diffuse": str(bool(iw.maximally_diffuse)).lower()},
        )
        write_container(os.path.join(tmp, "pchol_samples.ftim"), samples.samples)
    logger.info("priors: nu0 = %.4g, %d pChol samples", iw.nu0, samples.K)
    return final


def load_template(cfg):
    return SpatialTemplate(
        mean=read_matrix(_path(cfg, "priors", "template_mean.ftim")),
        var=read_matrix(_path(cfg, "priors", "template_var.ftim")),
    )


def load_iw(cfg):
    meta = read_kv(_path(cfg, "priors", "iw.txt"))
    return IwPrior(
        Psi0=read_matrix(_path(cfg, "priors", "iw_psi0.ftim")),
        nu0=float(meta["nu0"]),
        maximally_diffuse=meta["maximally_diffuse"] == "true",
    )


def load_pchol(cfg):
    return FcSampleSet(read_container(_path(cfg, "priors", "pchol_samples.ftim")))


def load_fc_train(cfg):
    return FcTrainingSet.from_samples(read_container(_path(cfg, "priors", "fc_train.ftim")))


def load_prior(cfg, method):
    return load_iw(cfg) if method == "vb1" else load_pchol(cfg)


# ---------------------------------------------------------------------------
# fitting


def _segments(cfg):
    """``(label, start, stop)`` for every model length to fit."""
    lengths = sorted(set(cfg.durations) | {cfg.T_model})
    segs = [(f"T{T}", 0, T) for T in lengths]
    if cfg.fit_retest:
        segs.append(("retest", cfg.T_model, 2 * cfg.T_model))
    return segs


def _fit_one(method, Y, S0, template, prior, cfg, idx):
    """Fit one subject; returns ``(arrays, meta, log_text)``."""
    if method == "dr":
        f = dual_regression(Y, S0)
        return {"A_hat": f.A_hat, "S_hat": f.S_hat}, {"tau2": f.tau2_hat}, ""
    init = tica_em(Y, template, max_iter=cfg.max_iter, tol=cfg.tol, group_maps=S0)
    if method == "tica":
        meta = {"tau2": init.tau2_hat, "converged": init.converged, "n_iter": init.n_iter}
        return {"A_hat": init.A_hat, "S_hat": init.S_hat}, meta, ""
    opts = VbOptions(
        method=method.upper(), tol=cfg.tol, max_iter=cfg.max_iter, n_u_samples=cfg.n_u,
        use_neumann=cfg.use_neumann, seed=[cfg.vb_seed, idx], use_ess=cfg.use_ess,
    )
    fit = run_vb(Y, template, prior, opts, init=init)
    s = fit.state
    meta = {
        "tau2": s.tau2_hat, "alpha": s.alpha, "beta_hat": s.beta_hat, "T_eff": s.T_eff,
        "converged": fit.converged, "n_iter": fit.n_iter,
    }
    neumann = [r["admissible_fraction"] for r in fit.log if not r.get("exact")]
    if neumann and method == "vb2":
        meta["admissible_min"] = float(min(neumann))
        meta["admissible_mean"] = float(np.mean(neumann))
    arrays = {"A_hat": s.A_hat, "S_hat": s.S_hat, "ESS_S": s.ESS_S}
    if fit.u is not None:
        arrays["u"] = fit.u[None, :]
    return arrays, meta, fit.log_lines()


def fit(cfg, method, threads=1):
    """Fit every test subject with ``method``; returns (out dir, n unconverged)."""
    S0 = load_group_maps(cfg)
    test = load_subjects(cfg, "test")
    template = load_template(cfg) if method != "dr" else None
    prior = load_prior(cfg, method) if method in VB_METHODS else None
    final = _path(cfg, "fits", method)
    jobs = [(seg, i, s) for seg in _segments(cfg) for i, s in enumerate(test)]

    def work(job):
        (label, start, stop), i, s = job
        d = os.path.join(tmp, label, _sub(i))
        os.makedirs(d)
        Y = s.data(start, stop)
        try:
            arrays, meta, log = _fit_one(method, Y, S0, template, prior, cfg, i)
        except ConvergenceError as exc:
            with open(os.path.join(d, "diverged.txt"), "w") as fh:
                fh.write(str(exc))
            logger.warning("%s %s %s diverged", method, label, _sub(i))
            return 1
        for name, arr in arrays.items():
            write_container(os.path.join(d, f"{name}.ftim"), arr)
        meta["T"] = stop - start
        write_kv(os.path.join(d, "fit.txt"), {k: _plain(v) for k, v in meta.items()})
        if log:
            with open(os.path.join(d, "log.jsonl"), "w") as fh:
                fh.write(log)
        ok = meta.get("converged", True)
        logger.info("%s %s %s done%s", method, label, _sub(i), "" if ok else " (not converged)")
        return 0 if ok else 1

    with atomic_dir(final) as tmp:
        failures = sum(pmap(work, jobs, threads))
    return final, failures


def _plain(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (np.floating, float)):
        return float(v)
    return v


def fit_dir(cfg, method, label, i):
    return _path(cfg, "fits", method, label, _sub(i))


def load_estimates(cfg, method, label, n):
    """``(fc list, map list)`` for ``n`` subjects of one fitted segment."""
    fcs, maps = [], []
    for i in range(n):
        d = fit_dir(cfg, method, label, i)
        if not os.path.exists(os.path.join(d, "A_hat.ftim")):
            raise DataError(f"missing fit {d}; run `fctica fit` first")
        fcs.append(correlation(read_matrix(os.path.join(d, "A_hat.ftim"))))
        maps.append(read_matrix(os.path.join(d, "S_hat.ftim")))
    return fcs, maps


def load_vb_fit(cfg, method, label, i):
    """Rebuild the parts of a VB fit that posterior sampling needs."""
    d = fit_dir(cfg, method, label, i)
    meta = read_kv(os.path.join(d, "fit.txt"))
    A = read_matrix(os.path.join(d, "A_hat.ftim"))
    Q = A.shape[1]
    state = VbState(
        S_hat=read_matrix(os.path.join(d, "S_hat.ftim")),
        S_cov=None,
        ESS_S=read_matrix(os.path.join(d, "ESS_S.ftim")),
        A_hat=A,
        A_cov=np.zeros((Q, Q)),
        EAA=None,
        alpha=float(meta["alpha"]),
        beta_hat=float(meta["beta_hat"]),
        tau2_hat=float(meta["tau2"]),
        T_eff=float(meta["T_eff"]),
    )
    return VbFit(state, [], meta["converged"] == "true", int(meta["n_iter"]), method.upper())


# ---------------------------------------------------------------------------
# posterior


def posterior(cfg, method, threads=1):
    if method not in VB_METHODS:
        raise DataError(f"posterior FC is defined for vb1 and vb2, not {method}")
    test = load_subjects(cfg, "test")
    prior = load_prior(cfg, method)
    mode = cfg[f"posterior_mode_{method}"]
    n = cfg[f"posterior_n_{method}"] or None
    label = f"T{cfg.T_model}"
    final = _path(cfg, "posterior", method)

    def work(job):
        i, s = job
        f = load_vb_fit(cfg, method, label, i)
        Y = s.data(0, cfg.T_model)
        samples = sample_posterior_a(f, Y, prior, mode=mode, n=n, seed=[cfg.posterior_seed, i])
        p = fc_credible_intervals(samples, cfg.level, point=correlation(f.state.A_hat))
        blocks = [p.mean, p.median, p.ci_lo, p.ci_hi, p.significant.astype(float)]
        write_container(os.path.join(tmp, f"{_sub(i)}.ftim"), blocks)
        logger.info("posterior %s %s: %d samples", method, _sub(i), len(samples))

    with atomic_dir(final) as tmp:
        write_kv(
            os.path.join(tmp, "posterior.txt"),
            {"mode": mode, "level": cfg.level, "blocks": ",".join(POSTERIOR_BLOCKS)},
        )
        pmap(work, list(enumerate(test)), threads)
    return final


def load_posteriors(cfg, method, n):
    from .posterior import FcPosterior

    out = []
    for i in range(n):
        b = read_container(_path(cfg, "posterior", method, f"{_sub(i)}.ftim"))
        out.append(FcPosterior(b[0], b[1], b[2], b[3], b[4] > 0.5, cfg.level))
    return out


# ---------------------------------------------------------------------------
# evaluation


def evaluate(cfg):
    """Metric tables over the test subjects; returns the written paths."""
    test = load_subjects(cfg, "test")
    n = len(test)
    T = cfg.T_model
    label = f"T{T}"
    methods = [m for m in cfg.methods if os.path.isdir(_path(cfg, "fits", m))]
    if not methods:
        raise DataError("no fits found; run `fctica fit` first")
    hold = [s.fc_holdout for s in test]
    insample = [s.fc_model(T) for s in test]
    truth_maps = [s.S_true for s in test]

    fc_hold, fc_in, map_mae, summary = {}, {}, {}, {}
    for m in methods:
        fcs, maps = load_estimates(cfg, m, label, n)
        fc_hold[m] = ev.mae(fcs, hold)
        fc_in[m] = ev.mae(fcs, insample)
        map_mae[m] = ev.mae(maps, truth_maps)
        summary[m] = {
            "fc_mae_holdout": ev.mean_offdiag(fc_hold[m]),
            "fc_mae_insample": ev.mean_offdiag(fc_in[m]),
            "map_mae": float(map_mae[m].mean()),
        }
        if m == "vb2":
            adm = [read_kv(os.path.join(fit_dir(cfg, m, label, i), "fit.txt")) for i in range(n)]
            vals = [float(a["admissible_min"]) for a in adm if "admissible_min" in a]
            if vals:
                summary[m]["admissible_min"] = min(vals)

    final = _path(cfg, "metrics")
    written = []
    with atomic_dir(final) as tmp:

        def out(name):
            written.append(os.path.join(final, name))
            return os.path.join(tmp, name)

        ev.write_metric_csv(out("fc_mae_holdout.csv"), fc_hold)
        ev.write_metric_csv(out("fc_mae_insample.csv"), fc_in)
        ev.write_metric_csv(out("map_mae.csv"), map_mae, kind="map")
        pct = {}
        for m in methods:
            for base in ("dr", "tica"):
                if base in fc_hold and m != base and not (m == "dr" and base == "tica"):
                    pct[f"{m}_vs_{base}"] = ev.percent_change(fc_hold[m], fc_hold[base])
        if pct:
            ev.write_metric_csv(out("fc_pct_change.csv"), pct)

        cover = {}
        for m in methods:
            if m in VB_METHODS and os.path.isdir(_path(cfg, "posterior", m)):
                per, overall, width = ev.ci_coverage(load_posteriors(cfg, m, n), insample)
                cover[m] = per
                summary[m]["coverage"] = overall
                summary[m]["ci_width"] = width
        if cover:
            ev.write_metric_csv(out("fc_coverage.csv"), cover)

        if cfg.fit_retest:
            icc = {}
            for m in methods:
                fc1, _ = load_estimates(cfg, m, label, n)
                fc2, _ = load_estimates(cfg, m, "retest", n)
                icc[m] = ev.icc(fc1, fc2)
                summary[m]["fc_icc"] = ev.mean_offdiag(np.nan_to_num(icc[m]))
            ev.write_metric_csv(out("fc_icc.csv"), icc)

        lengths = sorted(set(cfg.durations) | {T})
        if len(lengths) > 1:
            with open(out("duration.csv"), "w") as fh:
                fh.write("method,T,fc_mae_holdout,fc_mae_insample\n")
                for m in methods:
                    for L in lengths:
                        fcs, _ = load_estimates(cfg, m, f"T{L}", n)
                        h = ev.mean_offdiag(ev.mae(fcs, hold))
                        i_ = ev.mean_offdiag(ev.mae(fcs, [s.fc_model(L) for s in test]))
                        fh.write(f"{m},{L},{h!r},{i_!r}\n")

        keys = sorted({k for v in summary.values() for k in v})
        with open(out("summary.csv"), "w") as fh:
            fh.write("method," + ",".join(keys) + "\n")
            for m in methods:
                fh.write(m + "," + ",".join(repr(summary[m].get(k, float("nan"))) for k in keys) + "\n")
        with open(out("summary.json"), "w") as fh:
            json.dump(summary, fh, indent=1, sort_keys=True)
    return written
