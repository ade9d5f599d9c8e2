"""Publication-style text tables: estimates, t-statistics and marginal effects."""

from __future__ import annotations

from .data import CONSTANT
from .estimator import EstimationResult
from .inference import MarginalEffectsTable

WIDTH_LABEL = 58


def _num(x, fmt="{:.4f}") -> str:
    return "" if x is None else fmt.format(x)


def _line(label, est=None, t=None, effects=None) -> str:
    cells = [_num(est, "{:.3f}"), _num(t, "{:.2f}")]
    cells += [_num(e) for e in effects] if effects is not None else ["", "", ""]
    label = label if len(label) <= WIDTH_LABEL else label[: WIDTH_LABEL - 3] + "..."
    return f"{label:<{WIDTH_LABEL}}" + "".join(f"{c:>11}" for c in cells)


def format_report(
    result: EstimationResult,
    margins: MarginalEffectsTable | None = None,
    themes: dict[str, str] | None = None,
) -> str:
    """Rows follow the usual layout of random-parameters logit result tables.

    Order: constants, the random-parameter block (mean, standard deviation,
    heterogeneity in the mean, heterogeneity in the variance), single-function
    fixed effects grouped by theme, variables entering several functions with
    their net effect on the last row, then the fit statistics.
    """
    spec = result.model_spec()
    themes = themes or {}
    effects = {}
    if margins is not None:
        effects = {r.variable: r.effects for r in margins.rows}
    est, tst = result.estimates, result.t_stats

    funcs: dict[str, list] = {}
    for t in spec.terms:
        if t.variable != CONSTANT:
            funcs.setdefault(t.variable, []).append(t)
    mixed = [v for v, ts in funcs.items() if len(ts) > 1]

    header = f"{'Variable':<{WIDTH_LABEL}}" + "".join(
        f"{h:>11}" for h in ("Estimate", "t-stat", "ME N", "ME M", "ME MM")
    )
    out = []
    if spec.name:
        out.append(spec.name)
    out += [header, "-" * len(header)]

    def label(t):
        return f"{t.variable} [{t.alternative.short}]"

    for t in spec.terms:
        if t.variable == CONSTANT:
            out.append(_line(f"Constant [{t.alternative.short}]", est[t.coef_id], tst[t.coef_id]))

    if spec.random_parameters:
        out.append("Random parameters in utility functions")
        for rp in spec.random_parameters:
            t = spec.term(rp.coef_id)
            me = effects.get(t.variable) if t.variable not in mixed else None
            out.append(_line("  " + label(t), est[t.coef_id], tst[t.coef_id], me))
            out.append(_line("  Standard deviation of parameter distribution", est[rp.sd_id], tst[rp.sd_id]))
            if rp.mean_shift:
                out.append("  Heterogeneity in the mean of the random parameter")
                for v, cid in rp.mean_shift:
                    out.append(_line(f"    {label(t)}: {v}", est[cid], tst[cid]))
            if rp.variance_shift:
                out.append("  Heterogeneity in the variance of the random parameter")
                for v, cid in rp.variance_shift:
                    out.append(_line(f"    {label(t)}: {v}", est[cid], tst[cid]))

    random_ids = set(spec.random_ids)
    grouped: dict[str, list] = {}
    for t in spec.fixed_terms:
        if t.variable == CONSTANT or t.variable in mixed:
            continue
        grouped.setdefault(themes.get(t.variable, "Other variables"), []).append(t)
    for theme, terms in grouped.items():
        out.append(theme)
        for t in terms:
            out.append(_line("  " + label(t), est[t.coef_id], tst[t.coef_id], effects.get(t.variable)))

    if mixed:
        out.append("Variables with mixed effects (net marginal effects reported)")
        for v in mixed:
            ts = funcs[v]
            for i, t in enumerate(ts):
                me = effects.get(v) if i == len(ts) - 1 else None
                tag = " (random mean)" if t.coef_id in random_ids else ""
                out.append(_line("  " + label(t) + tag, est[t.coef_id], tst[t.coef_id], me))

    out.append("-" * len(header))
    out.append(f"{'Number of observations':<{WIDTH_LABEL}}{result.n_obs:>11d}")
    out.append(f"{'Number of estimated parameters':<{WIDTH_LABEL}}{result.n_parameters:>11d}")
    out.append(f"{'Log likelihood at zero, LL(0)':<{WIDTH_LABEL}}{result.ll0:>11.2f}")
    out.append(f"{'Log likelihood at convergence, LL(beta)':<{WIDTH_LABEL}}{result.llb:>11.2f}")
    out.append(f"{'rho^2 = 1 - LL(beta)/LL(0)':<{WIDTH_LABEL}}{result.rho2:>11.2f}")
    out.append("")
    out.append("LL(0) is the log-likelihood with every parameter at zero (-N ln 3).")
    if result.draws:
        out.append(f"Halton draws per observation: {result.draws['draws_per_observation']}, "
                   f"burn-in {result.draws['burn_in']}.")
    if not result.converged:
        out.append(f"WARNING: optimizer did not converge ({result.message}).")
    if not result.se_available:
        out.append("WARNING: standard errors unavailable (Hessian not negative definite).")
    for note in result.notes:
        out.append(f"Note: {note}")
    if margins is not None:
        for note in margins.notes:
            out.append(f"Note: {note}")
    return "\n".join(out) + "\n"
