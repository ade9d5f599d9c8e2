"""Independent reference computations used as test oracles.

Nothing here calls into the likelihood engine; each function recomputes its
quantity from first principles with plain Python or numpy.
"""

import math

import numpy as np

from rpmnl.data import ChoiceDataset, ModelSpec, RandomParameterSpec, SeverityLevel, UtilityTerm


def utilities(dataset, spec, values):
    N = len(dataset)
    u = np.zeros((N, 3))
    for t in spec.terms:
        x = np.ones(N) if t.variable == "constant" else dataset.columns[t.variable]
        u[:, int(t.alternative)] += values.get(t.coef_id, 0.0) * x
    return u


def closed_form_mnl_loglik(dataset, spec, values):
    """Fixed-parameter logit log-likelihood, one observation at a time."""
    u = utilities(dataset, spec, values)
    ll = 0.0
    for n in range(len(dataset)):
        m = max(u[n])
        lse = m + math.log(sum(math.exp(v - m) for v in u[n]))
        ll += u[n, dataset.outcomes[n]] - lse
    return ll


def quadrature_probability(mu, sd, nodes=64):
    """P(M) when U_M = beta with beta ~ N(mu, sd^2) and U_N = U_MM = 0."""
    t, w = np.polynomial.hermite.hermgauss(nodes)
    beta = mu + sd * math.sqrt(2.0) * t
    return float(np.sum(w * np.exp(beta) / (2.0 + np.exp(beta))) / math.sqrt(math.pi))


def chi_square_tail_series(x, df):
    """Upper tail of chi-square by the power series of the lower incomplete gamma."""
    a, z = df / 2.0, x / 2.0
    if z == 0:
        return 1.0
    term = 1.0 / a
    total = term
    k = 1
    while term > 1e-17 * total:
        term *= z / (a + k)
        total += term
        k += 1
    lower = math.exp(a * math.log(z) - z - math.lgamma(a)) * total
    return 1.0 - lower


def pearson_by_hand(table):
    rows = [sum(r) for r in table]
    cols = [sum(c) for c in zip(*table)]
    total = sum(rows)
    stat = 0.0
    for i, r in enumerate(table):
        for j, o in enumerate(r):
            e = rows[i] * cols[j] / total
            stat += (o - e) ** 2 / e
    return stat


def newton_mnl(dataset, spec, iterations=50):
    """Fixed-parameter logit by full Newton steps on the exact Hessian (IRLS form)."""
    terms = spec.terms
    N, K = len(dataset), len(terms)
    X = np.zeros((N, 3, K))
    for j, t in enumerate(terms):
        X[:, int(t.alternative), j] = 1.0 if t.variable == "constant" else dataset.columns[t.variable]
    y = np.eye(3)[dataset.outcomes]
    b = np.zeros(K)
    for _ in range(iterations):
        u = X @ b
        p = np.exp(u - u.max(axis=1, keepdims=True))
        p /= p.sum(axis=1, keepdims=True)
        xbar = np.einsum("nk,nkj->nj", p, X)
        g = np.einsum("nk,nkj->j", y - p, X)
        d = X - xbar[:, None, :]
        H = -np.einsum("nk,nki,nkj->ij", p, d, d)
        step = np.linalg.solve(H, g)
        b = b - step
        if np.max(np.abs(step)) < 1e-13:
            break
    return {t.coef_id: float(v) for t, v in zip(terms, b)}


def mnl_standard_errors(dataset, spec, values):
    """Square roots of the diagonal of the inverse exact information matrix of a fixed logit."""
    terms = spec.terms
    N, K = len(dataset), len(terms)
    X = np.zeros((N, 3, K))
    for j, t in enumerate(terms):
        X[:, int(t.alternative), j] = 1.0 if t.variable == "constant" else dataset.columns[t.variable]
    b = np.array([values[t.coef_id] for t in terms])
    u = X @ b
    p = np.exp(u - u.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    d = X - np.einsum("nk,nkj->nj", p, X)[:, None, :]
    info = np.einsum("nk,nki,nkj->ij", p, d, d)
    se = np.sqrt(np.diag(np.linalg.inv(info)))
    return {t.coef_id: float(v) for t, v in zip(terms, se)}


def random_small_problem(rng, n_obs=40, with_random=True, indicator_only=False):
    """A random spec and dataset: a few indicator/continuous covariates on M and MM."""
    n_vars = int(rng.integers(1, 4))
    cols, kinds = {}, {}
    for k in range(n_vars):
        name = f"v{k}"
        if indicator_only or rng.random() < 0.6:
            cols[name] = (rng.random(n_obs) < rng.uniform(0.2, 0.8)).astype(float)
            cols[name][:2] = [0.0, 1.0]
            kinds[name] = "indicator"
        else:
            cols[name] = rng.normal(size=n_obs)
            kinds[name] = "continuous"
    cols["sz"] = (rng.random(n_obs) < 0.5).astype(float)
    cols["sw"] = (rng.random(n_obs) < 0.5).astype(float)
    outcomes = rng.integers(0, 3, n_obs)
    outcomes[:3] = [0, 1, 2]
    ds = ChoiceDataset([f"r{n}" for n in range(n_obs)], outcomes, cols)
    terms = [UtilityTerm("asc_M", "constant", SeverityLevel.MINOR),
             UtilityTerm("asc_MM", "constant", SeverityLevel.MODERATE_SEVERE)]
    for name in cols:
        if name in ("sz", "sw"):
            continue
        alts = [SeverityLevel.MINOR, SeverityLevel.MODERATE_SEVERE]
        choice = int(rng.integers(0, 3))
        picked = alts if choice == 2 else [alts[choice]]
        for a in picked:
            terms.append(UtilityTerm(f"{name}_{a.short}", name, a))
    rps = []
    if with_random:
        t = terms[2 + int(rng.integers(0, len(terms) - 2))]
        ms = (("sz", f"mean:{t.coef_id}:sz"),) if rng.random() < 0.5 else ()
        vs = (("sw", f"var:{t.coef_id}:sw"),) if rng.random() < 0.5 else ()
        rps.append(RandomParameterSpec(t.coef_id, f"sd:{t.coef_id}", ms, vs))
    spec = ModelSpec(terms, rps)
    return ds, spec, kinds


def result_for(spec, values, dataset, halton=None):
    """An EstimationResult carrying chosen parameter values, without fitting."""
    from rpmnl.data import ParameterIndex
    from rpmnl.estimator import EstimationResult

    idx = ParameterIndex(spec)
    theta = idx.from_dict(values, default=0.0)
    names = list(idx.names)
    draws = {}
    if halton is not None:
        draws = halton.to_dict() | {"n_random": len(spec.random_parameters)}
    return EstimationResult(
        names=names,
        estimates={k: float(theta[i]) for i, k in enumerate(names)},
        std_errors={k: None for k in names},
        t_stats={k: None for k in names},
        ll0=-len(dataset) * math.log(3),
        llb=-len(dataset) * math.log(3),
        rho2=0.0,
        n_obs=len(dataset),
        iterations=0,
        converged=True,
        message="fixed values",
        gradient_norm=0.0,
        draws=draws,
        spec=spec.to_dict(),
        spec_hash=spec.spec_hash(),
        data_hash=dataset.content_hash(),
        per_observation=[],
        se_available=False,
    )


def brute_force_flip(dataset, spec, theta, draws, variable, alternatives):
    """Margins by physically rewriting the data.

    The appearances of ``variable`` in the chosen utility functions are
    pointed at a private copy of the column; that copy is then set to all ones
    and all zeros and the probabilities differenced.
    """
    from dataclasses import replace

    from rpmnl.simll import ProbabilityEngine

    copy = variable + "__flip"
    alts = {int(a) for a in alternatives}
    rps_alt = {rp.coef_id: int(spec.term(rp.coef_id).alternative) for rp in spec.random_parameters}
    terms = [replace(t, variable=copy) if t.variable == variable and int(t.alternative) in alts else t
             for t in spec.terms]
    rps = []
    for rp in spec.random_parameters:
        if rps_alt[rp.coef_id] in alts:
            rp = replace(
                rp,
                mean_shift=tuple((copy if v == variable else v, c) for v, c in rp.mean_shift),
                variance_shift=tuple((copy if v == variable else v, c) for v, c in rp.variance_shift),
            )
        rps.append(rp)
    flipped_spec = ModelSpec(terms, rps, spec.base_alternative, spec.name)
    probs = []
    for value in (1.0, 0.0):
        ds = dataset.with_column(copy, np.full(len(dataset), value))
        probs.append(ProbabilityEngine.from_data(ds, flipped_spec, draws).probabilities(theta))
    diff = probs[0] - probs[1]
    return np.array([math.fsum(diff[:, k]) / diff.shape[0] for k in range(3)])


RAW_HEADER = [
    "record_id", "date", "location", "manufacturer", "automation_class", "source", "severity",
    "weather", "road_type", "road_description", "surface", "lighting", "manufacture_year", "mileage",
    "driver_type", "speed", "precrash_movement", "collision_partner", "impact_area",
    "property_damage", "airbag", "towed",
]

RAW_CHOICES = {
    "weather": ["clear", "cloudy", "rain"],
    "road_type": ["highway", "intersection", "street", "parking lot"],
    "road_description": ["no unusual conditions", "work zone"],
    "surface": ["dry", "wet", "snow"],
    "lighting": ["daylight", "dark - lighted", "dark - not lighted", "dusk"],
    "driver_type": ["custom", "test", "remote"],
    "precrash_movement": ["proceeding straight", "merging", "crossing", "turning", "changing lanes", "stopped"],
    "collision_partner": ["fixed object", "vehicle", "truck", "motorcycle", "pedestrian"],
    "impact_area": ["left", "right", "rear", "front", "top"],
    "property_damage": ["yes", "no"],
    "airbag": ["yes", "no"],
    "towed": ["yes", "no"],
}


def raw_row(rng, n, automation_class="ADAS", severity="no injury"):
    row = {
        "record_id": f"r{n}", "date": f"2023-01-{1 + n % 28:02d}", "location": f"city{n}",
        "manufacturer": "maker", "automation_class": automation_class, "source": "NHTSA", "severity": severity,
        "manufacture_year": str(int(rng.integers(2015, 2024))), "mileage": str(int(rng.integers(0, 120000))),
        "speed": str(int(rng.integers(0, 80))),
    }
    for k, opts in RAW_CHOICES.items():
        row[k] = opts[int(rng.integers(0, len(opts)))]
    return row


def write_raw_csv(path, rows, header=RAW_HEADER):
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([r.get(h, "") for h in header])


def degenerate_loglik(dataset, spec, values):
    """Log-likelihood when every standard deviation is zero.

    Each random coefficient collapses to its mean plus the mean shifts, so the
    model is an ordinary logit; computed observation by observation.
    """
    u = utilities(dataset, spec.fixed_only(), {k: v for k, v in values.items() if k not in spec.random_ids})
    for rp in spec.random_parameters:
        t = spec.term(rp.coef_id)
        beta = np.full(len(dataset), values[rp.coef_id])
        for v, cid in rp.mean_shift:
            beta = beta + values[cid] * dataset.columns[v]
        x = np.ones(len(dataset)) if t.variable == "constant" else dataset.columns[t.variable]
        u[:, int(t.alternative)] += beta * x
    ll = 0.0
    for n in range(len(dataset)):
        m = max(u[n])
        ll += u[n, dataset.outcomes[n]] - (m + math.log(sum(math.exp(v - m) for v in u[n])))
    return ll
