import logging
import os
from dataclasses import dataclass
from typing import Optional

import click

from . import utils
from .annulus import CSV_HEADER, DEFAULT_L1, DEFAULT_L2, DEFAULT_LAMBDA
from .convergence import ExperimentConfig, run_semicontinuity_experiment
from .dimension import DEFAULT_RATE_BAND, CurveConfig, DimensionEstimate, estimate_conformal_dimension
from .errors import ConfdimError, InconclusiveError, InvalidInputError
from .hyperbolic import four_point_delta, gromov_product_condition, standard_visual_metric, tree_from_json
from .metric import FiniteMetricSpace, build_net_hierarchy, regularity_report
from .modulus import AdjacencyRule
from .spaces import QSSCertificate, SpaceDescriptor, exact_hausdorff_dimension, generate

__version__ = '0.3.0'
"""
How confdim's cli works:
every command reads JSON inputs (space descriptors, metric spaces, trees or
experiment configs), runs one pipeline and writes JSON/CSV outputs.

generate      descriptor -> space.json + certificate.json
regularity    space -> doubling, uniform perfectness and Ahlfors diagnostics
dimension     space -> estimate.json (+ curves.csv)
converge      experiment -> experiment.json + one curve CSV per space
hyperbolicity space or tree -> four point delta
visual        tree -> visual metric on the leaves

Expected failures leave through ConfdimError and its exit code:
2 invalid input, 3 resolution or budget, 4 inconclusive bracket (outputs are still written).
"""

logger = logging.getLogger(__name__)


class ConfdimGroup(click.Group):
    """Reports ConfdimError on stderr and exits with its code"""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except ConfdimError as err:
            click.echo(f"error: {err}", err=True)
            ctx.exit(err.exit_code)


@dataclass(frozen=True)
class RunConfig:
    base: float = 10.0
    lam: float = DEFAULT_LAMBDA
    L1: float = DEFAULT_L1
    L2: float = DEFAULT_L2
    k_max: Optional[int] = None
    i_max: Optional[int] = None
    use_n0: bool = False
    L0: Optional[float] = None
    rho0: Optional[float] = None
    p_lo: float = 0.1
    p_hi: float = 3.0
    p_tol: float = 0.05
    eps_decay: float = 1e-2
    k_tail: int = 3
    decay_mode: str = 'absolute'
    rate_band: float = DEFAULT_RATE_BAND
    adjacency: str = 'surrogate'
    threads: int = 1
    format: str = 'json'
    seed: int = 0

    def curve_config(self, cert: Optional[QSSCertificate] = None) -> CurveConfig:
        """Curve settings; n0 mode falls back on the certificate's L0 and rho0"""
        L0, rho0 = self.L0, self.rho0
        if self.use_n0 and cert is not None:
            L0 = cert.L0 if L0 is None else L0
            rho0 = cert.rho0 if rho0 is None else rho0
        return CurveConfig(base=self.base, lam=self.lam, L1=self.L1, L2=self.L2, rule=AdjacencyRule(self.adjacency),
                           k_max=self.k_max, i_max=self.i_max, use_n0=self.use_n0, L0=L0, rho0=rho0,
                           eps_decay=self.eps_decay, k_tail=self.k_tail, decay_mode=self.decay_mode,
                           rate_band=self.rate_band, threads=self.threads, seed=self.seed)


PIPELINE_OPTIONS = [
    click.option('--base', default=10.0, show_default=True, help="scale factor between net levels"),
    click.option('--lambda', 'lam', default=DEFAULT_LAMBDA, show_default=True, help="ball inflation of the path graphs"),
    click.option('--L1', 'L1', default=DEFAULT_L1, show_default=True, help="inner radius factor of the annuli"),
    click.option('--L2', 'L2', default=DEFAULT_L2, show_default=True, help="outer radius factor of the annuli"),
    click.option('--kmax', 'k_max', type=int, default=None, help="finest net level [default: deepest resolved level]"),
    click.option('--imax', 'i_max', type=int, default=None, help="largest level i of the supremum [default: first level with a nonempty outer set]"),
    click.option('--use-n0', is_flag=True, default=False, help="truncate the supremum at n0 computed from L0 and rho0"),
    click.option('--L0', 'L0', type=float, default=None, help="quasi-selfsimilarity constant L0 [default: from the certificate]"),
    click.option('--rho0', type=float, default=None, help="quasi-selfsimilarity radius rho0 [default: from the certificate]"),
    click.option('--p-lo', default=0.1, show_default=True, help="lower end of the exponent window"),
    click.option('--p-hi', default=3.0, show_default=True, help="upper end of the exponent window"),
    click.option('--p-tol', default=0.05, show_default=True, help="bracket width at which bisection stops"),
    click.option('--decay-eps', 'eps_decay', default=1e-2, show_default=True, help="decay threshold of the Vanishes rule"),
    click.option('--k-tail', default=3, show_default=True, help="number of trailing curve entries the decay rule reads"),
    click.option('--decay-mode', type=click.Choice(['absolute', 'relative', 'trend']), default='absolute', show_default=True,
                 help="read the raw curve, the curve divided by its first nonzero value, or the decay rate of its tail"),
    click.option('--rate-band', default=DEFAULT_RATE_BAND, show_default=True,
                 help="trend mode: rates above -band persist, rates below -2·band vanish"),
    click.option('--adjacency', type=click.Choice(['surrogate', 'witness']), default='surrogate', show_default=True,
                 help="path graph adjacency rule"),
    click.option('--threads', default=1, show_default=True, help="worker threads; results do not depend on it"),
    click.option('--format', 'format', type=click.Choice(['json', 'csv']), default='json', show_default=True,
                 help="csv also writes the probed curves as CSV"),
    click.option('--seed', default=0, show_default=True, help="seed of every randomized subsample"),
]


def pipeline_options(func):
    for option in reversed(PIPELINE_OPTIONS):
        func = option(func)
    return func


@click.group(cls=ConfdimGroup)
@click.option('-v', '--verbose', count=True)
@click.version_option(__version__, message="confdim v%(version)s")
@click.pass_context
def cli(ctx, verbose):
    """
    confdim 0.3.0 \b
    Estimates the Ahlfors regular conformal dimension of finite metric spaces
    through combinatorial moduli of annuli. See the help message of
    <generate>, <regularity>, <dimension>, <converge>, <hyperbolicity> and
    <visual> for more informations.
    """
    ctx.ensure_object(dict)
    ctx.obj['verbosity'] = verbose
    utils.setup_logging(verbose)


### inputs ###

def load_space(path: str) -> tuple[FiniteMetricSpace, Optional[SpaceDescriptor], Optional[QSSCertificate]]:
    """Reads a metric space document, or a descriptor which is then generated"""
    doc = utils.read_json(path)
    if not isinstance(doc, dict):
        raise InvalidInputError(f"{path} does not hold a JSON object")
    if 'kind' in doc:
        descriptor = SpaceDescriptor.from_json(doc)
        space, cert = generate(descriptor)
        return space, descriptor, cert
    if 'edges' in doc:
        return tree_from_json(doc).metric(), None, None
    return FiniteMetricSpace.from_json(doc), None, None


def curve_rows(estimate: DimensionEstimate) -> list[list]:
    rows = []
    for p in sorted(estimate.curves):
        rows.extend(estimate.curves[p].csv_rows())
    return rows


def summary(ctx, label: str, data) -> None:
    verbosity = ctx.obj['verbosity']
    if verbosity:
        click.echo(f"{label}: {utils.summarize(data, verbosity)}", err=True)


### commands ###

@cli.command('generate')
@click.argument('descriptor', type=click.Path(exists=True, dir_okay=False))
@click.option('--out', '-o', default='.', show_default=True, help="output directory")
@click.pass_context
def cli_generate(ctx, descriptor, out):
    """
    Generates the finite approximation described by DESCRIPTOR.
    Writes space.json (the metric space) and certificate.json (the
    quasi-selfsimilarity constants, null for a single point).

    \b
    DESCRIPTOR EXAMPLES:
        {"kind":"cantor","n":1,"depth":6}
        {"kind":"carpet","n":2,"depth":3}
        {"kind":"snowflake","eps":0.5,"inner":{"kind":"interval","depth":8}}
        {"kind":"tree_boundary","branching":2,"depth":6,"a":1.0986}
    """
    desc = SpaceDescriptor.from_json(utils.read_json(descriptor))
    space, cert = generate(desc)
    utils.write_json(space.to_json(), utils.output_path(out, 'space', 'json'))
    utils.write_json({'descriptor': desc.to_json(),
                      'exact_hausdorff_dimension': exact_hausdorff_dimension(desc),
                      'certificate': None if cert is None else cert.to_json()},
                     utils.output_path(out, 'certificate', 'json'))
    summary(ctx, 'generated', f"{desc.name}: {space.n} points")


@cli.command('regularity')
@click.argument('space', type=click.Path(exists=True, dir_okay=False))
@click.option('--base', default=10.0, show_default=True, help="scale factor between net levels")
@click.option('--kmax', 'k_max', type=int, default=None, help="finest net level [default: deepest resolved level]")
@click.option('--max-centers', type=int, default=None, help="seeded subsample size of the ball centers")
@click.option('--seed', default=0, show_default=True, help="seed of the center subsample")
@click.option('--out', '-o', default='-', show_default=True, help="output file, '-' for stdout")
@click.pass_context
def cli_regularity(ctx, space, base, k_max, max_centers, seed, out):
    """
    Runs the doubling, uniform perfectness and Ahlfors regularity diagnostics
    on SPACE (a metric space or a descriptor).
    """
    space, desc, _ = load_space(space)
    k_max = CurveConfig(base=base, k_max=k_max).hierarchy_depth(space)
    hierarchy = build_net_hierarchy(space, base, k_max)
    report = regularity_report(space, hierarchy, max_centers=max_centers, seed=seed).to_json()
    if desc is not None:
        report['exact_hausdorff_dimension'] = exact_hausdorff_dimension(desc)
    utils.write_json(report, out)


@cli.command('dimension')
@click.argument('space', type=click.Path(exists=True, dir_okay=False))
@pipeline_options
@click.option('--grid', type=float, multiple=True, help="probe these exponents instead of bisecting (repeatable)")
@click.option('--out', '-o', default='.', show_default=True, help="output directory")
@click.pass_context
def cli_dimension(ctx, space, grid, out, **options):
    """
    Brackets the conformal dimension of SPACE (a metric space or a descriptor)
    between an exponent whose annulus moduli persist and one whose moduli vanish.
    Writes estimate.json, and curves.csv with --format csv.
    Exits with code 4 when an inconclusive verdict blocked the bracket.
    """
    run = RunConfig(**options)
    space, desc, cert = load_space(space)
    estimate = estimate_conformal_dimension(space, None, run.p_lo, run.p_hi, run.p_tol,
                                            run.curve_config(cert), grid=list(grid) or None)
    document = estimate.to_json()
    if desc is not None:
        document['descriptor'] = desc.to_json()
    utils.write_json(document, utils.output_path(out, 'estimate', 'json'))
    if run.format == 'csv':
        utils.write_csv(CSV_HEADER, curve_rows(estimate), utils.output_path(out, 'curves', 'csv'))
    summary(ctx, 'bracket', [estimate.cd_low, estimate.cd_high])
    if estimate.inconclusive:
        raise InconclusiveError(f"inconclusive bracket [{utils.fmt(estimate.cd_low)}, {utils.fmt(estimate.cd_high)}]")


@cli.command('converge')
@click.option('--config', 'config_path', required=True, type=click.Path(exists=True, dir_okay=False),
              help="experiment JSON: {\"sequence\":[...],\"limit\":{...},\"dimension\":{...}}")
@pipeline_options
@click.option('--out', '-o', default='.', show_default=True, help="output directory")
@click.pass_context
def cli_converge(ctx, config_path, out, **options):
    """
    Estimates the dimension along a sequence of spaces and at its limit, with
    the Hausdorff distances and Gromov-Hausdorff lower bounds to the limit.
    Writes experiment.json and one curves-<space>.csv per space.
    Settings in the experiment's "dimension" entry override the flags.
    """
    run = RunConfig(**options)
    doc = utils.read_json(config_path)
    if not isinstance(doc, dict):
        raise InvalidInputError(f"{config_path} does not hold a JSON object")
    settings = {'p_lo': run.p_lo, 'p_hi': run.p_hi, 'p_tol': run.p_tol}
    settings.update(doc.get('dimension', {}))
    config = ExperimentConfig.from_json(dict(doc, dimension=settings), run.curve_config())
    experiment = run_semicontinuity_experiment(config)

    utils.write_json(experiment.to_json(), utils.output_path(out, 'experiment', 'json'))
    for desc, estimate in zip(experiment.sequence + [experiment.limit],
                              experiment.estimates + [experiment.limit_estimate]):
        utils.write_csv(CSV_HEADER, curve_rows(estimate), utils.output_path(out, f'curves-{desc.name}', 'csv'))
    summary(ctx, 'verdict', experiment.verdict)
    blocked = [d.name for d, e in zip(experiment.sequence + [experiment.limit],
                                      experiment.estimates + [experiment.limit_estimate]) if e.inconclusive]
    if blocked:
        raise InconclusiveError(f"inconclusive brackets for {', '.join(dict.fromkeys(blocked))}")


@cli.command('hyperbolicity')
@click.argument('space', type=click.Path(exists=True, dir_okay=False))
@click.option('--max-points', default=60, show_default=True, help="largest space scanned exhaustively")
@click.option('--subsample', is_flag=True, default=False, help="scan a seeded subsample of larger spaces (approximate)")
@click.option('--seed', default=0, show_default=True, help="seed of the subsample")
@click.option('--out', '-o', default='-', show_default=True, help="output file, '-' for stdout")
@click.pass_context
def cli_hyperbolicity(ctx, space, max_points, subsample, seed, out):
    """
    Computes the four point hyperbolicity constant delta of SPACE (a metric
    space, a tree {"edges":[[parent,child,length],...],"root":0} or a descriptor)
    and counts the triples breaking the Gromov product form of the condition.
    """
    space, _, _ = load_space(space)
    report = four_point_delta(space, max_points, subsample, seed)
    document = report.to_json()
    if not report.approximate:
        document['gromov_product_violations'] = gromov_product_condition(space, report.delta)
    utils.write_json(document, out)


@cli.command('visual')
@click.argument('tree', type=click.Path(exists=True, dir_okay=False))
@click.option('--a', 'a', required=True, type=float, help="visual parameter, > 0")
@click.option('--out', '-o', default='-', show_default=True, help="output file, '-' for stdout")
@click.pass_context
def cli_visual(ctx, tree, a, out):
    """
    Writes the visual metric exp(-a·(z,z')_root) on the leaves of TREE as a
    metric space document.
    """
    space, report = standard_visual_metric(tree_from_json(utils.read_json(tree)), a)
    utils.write_json(space.to_json(), out)
    summary(ctx, 'visual metric', report)
    if out != '-':
        logger.info("wrote %d leaves to %s", space.n, os.path.abspath(out))
