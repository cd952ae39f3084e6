"""
Test plans and the suite runner.

A plan file (format `qprobe-plan v1`, see PLAN_FORMAT.md) names the subroutine under
test and says how to partition its inputs, how to combine the classes into frames,
how many cases to draw per frame and how to judge them. run_plan walks the stages

    validate -> partition -> combine -> sample -> execute -> detect

with every random draw taken from substreams of the plan seed, so a (plan, program,
seed) triple fixes every verdict. run_integration runs unit plans callee-first along
the dependency graph, and emit_report renders suite results and mutation reports as
aligned tables or TSV.
"""
import sys
import time
from dataclasses import dataclass, field
from io import StringIO
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import pyparsing as pp
from pyparsing import Forward, Group, Opt, Regex, StringEnd, Suppress, ZeroOrMore

from benchmarks import PLANS, BenchmarkEntry, builtin_benchmarks, builtin_doubles, get_benchmark
from detect import DetectorConfig, DetectorError, Verdict, VerdictStatus, evaluate_case, execute_case, test_variants
from io_spec import IdentitySpec, IOMark, SpecError, VarKind, parse_io_mark
from mutate import (ALL_TYPES, ComparisonDomain, Mutant, MutationConfig, MutationError, MutationReport, SurvivorClass,
                    classify_survivors, enumerate_mutants, run_mutation_analysis)
from partition import (ClassKind, EquivalenceClass, InputBinding, PartitionError, Strategy, TestFrame, combine,
                       frame_from_labels, partition_variable, sample_cases)
from program_model import (Program, ProgramError, derive_controlled, derive_inverse, derive_power, dependency_graph,
                           integration_order, reachable, substitute)
from qpl_parser import load_program
from quantum_state import RandomStream
from workers import parallel_map

PLAN_HEADER = "qprobe-plan"
PLAN_VERSION = "v1"
STAGES = ("validate", "partition", "combine", "sample", "execute", "detect")
SECTIONS = ("plan", "partition", "combine", "detector", "args", "doubles", "variants", "mutation")


class PlanError(ValueError):
    pass


class StageError(PlanError):
    """A suite stage failed; `stage` names it."""
    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")


# ---------------------------------------------------------------------------
# Plan files
# ---------------------------------------------------------------------------

def _strip_comment(s, loc, t):
    text = t[0]
    cut = text.find("//")
    return (text if cut < 0 else text[:cut]).strip()


def _plan_grammar():
    header = Suppress(pp.Keyword(PLAN_HEADER)) - Regex(r"v\d+")
    name = Regex(r"[A-Za-z_][A-Za-z0-9_]*")
    selector = Opt(Regex(r"[^\]\n]+"), default="").set_parse_action(lambda s, loc, t: t[0].strip())
    section = Suppress("[") + name + selector + Suppress("]")
    value = Regex(r"[^\n]*").leave_whitespace().set_parse_action(_strip_comment)
    entry = Group(name + Suppress("=") - value)
    block = Group(section + Group(ZeroOrMore(entry)))
    plan = header + Group(ZeroOrMore(block)) + StringEnd()
    plan.ignore(pp.dbl_slash_comment)
    return plan


_PLAN_GRAMMAR = _plan_grammar()


def _combine_grammar():
    name = Regex(r"[A-Za-z_][A-Za-z0-9_]*")
    expr = Forward()
    strategy = pp.one_of([s.value for s in Strategy], as_keyword=True)
    call = Group(strategy + Suppress("(") - expr + ZeroOrMore(Suppress(",") + expr) + Suppress(")"))
    expr <<= call | name
    return expr + StringEnd()


_COMBINE_GRAMMAR = _combine_grammar()


class TestPlan:
    """
    Parsed plan.

    Args:
        benchmark: Benchmark supplying program, IO mark and spec
        program: QPL-mini source files, overriding the benchmark's
        subroutine: Subroutine under test, overriding the benchmark's
        mark: IO mark text, overriding the benchmark's
        spec: 'benchmark' (default) or 'identity'
        seed: Master seed
        cases: Cases per frame, None for 2n^2
        theta: Relative phase of sampled two-value superpositions
        partitions: variable -> 'CSP' | 'CSMP' | 'custom' | 'doubles' | bucket text
        strategy: Combination expression such as 'ACoC(n, ECC(qs1, qs2))'
        base: Class labels of the BCC base frame
        detector: Default detector settings
        detector_overrides: (class selector, settings) pairs
        args: Fixed classical values that are not test inputs
        doubles: subroutine or slot name -> double label, substituted before testing
        variants: Settings of the variant identity checks (subroutine, n, k, inputs)
        mutation: Mutation settings, or None
    """
    __test__ = False

    def __init__(self, benchmark: Optional[str] = None, program: Sequence[str] = (),
                 subroutine: Optional[str] = None, mark: Optional[str] = None, spec: str = "benchmark",
                 seed: int = 42, cases: Optional[int] = None, theta: float = 0.0,
                 partitions: Optional[Dict[str, str]] = None, strategy: Optional[str] = None,
                 base: Sequence[str] = (), detector: Optional[Dict[str, str]] = None,
                 detector_overrides: Sequence[Tuple[str, Dict[str, str]]] = (),
                 args: Optional[Dict[str, int]] = None, doubles: Optional[Dict[str, str]] = None,
                 variants: Optional[Dict[str, str]] = None, mutation: Optional[MutationConfig] = None,
                 name: str = "", version: str = PLAN_VERSION):
        self.benchmark = benchmark
        self.program = tuple(program)
        self.subroutine = subroutine
        self.mark = mark
        self.spec = spec
        self.seed = seed
        self.cases = cases
        self.theta = theta
        self.partitions = dict(partitions or {})
        self.strategy = strategy
        self.base = tuple(base)
        self.detector = dict(detector or {})
        self.detector_overrides = list(detector_overrides)
        self.args = dict(args or {})
        self.doubles = dict(doubles or {})
        self.variants = dict(variants or {})
        self.mutation = mutation
        self.name = name or benchmark or subroutine or "plan"
        self.version = version

    def __repr__(self):
        return f"TestPlan({self.name}, {PLAN_HEADER} {self.version}, seed={self.seed})"


def _int(value: str, what: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise PlanError(f"{what}: expected an integer, got '{value}'") from None


def _list(value: str) -> List[str]:
    return [item.strip() for item in value.split(",") if item.strip()]


def _mutation_config(entries: Dict[str, str]) -> MutationConfig:
    types = _list(entries.get("types", "GM, SM, CM, MM"))
    caps = {}
    for item in _list(entries.get("caps", "")):
        key, _, value = item.partition(":")
        caps[key.strip()] = _int(value.strip(), f"cap of {key.strip()}")
    try:
        return MutationConfig(types, caps, _int(entries.get("seed", "42"), "mutation seed"),
                              entries.get("short_circuit", "per_class"))
    except (MutationError, ValueError) as e:
        raise PlanError(f"[mutation] {e}") from None


def parse_plan(text: str, name: str = "", base_dir: Optional[Path] = None) -> TestPlan:
    """Parse `qprobe-plan v1` text. Errors carry line and column."""
    try:
        version, blocks = _PLAN_GRAMMAR.parse_string(text, parse_all=True)
    except pp.ParseBaseException as e:
        raise PlanError(f"line {e.lineno}, column {e.col}: {e.msg}") from None
    if version != PLAN_VERSION:
        raise PlanError(f"Unsupported plan version '{version}' (this runner reads {PLAN_VERSION})")

    sections: Dict[str, Dict[str, str]] = {}
    overrides = []
    for block in blocks:
        section, selector, entries = block[0], block[1], block[2]
        if section not in SECTIONS:
            raise PlanError(f"Unknown section [{section}]")
        values = {key: value for key, value in entries}
        if section == "detector" and selector:
            overrides.append((selector, values))
            continue
        if selector:
            raise PlanError(f"Section [{section}] takes no selector")
        sections.setdefault(section, {}).update(values)

    head = sections.get("plan", {})
    program = _list(head.get("program", ""))
    if base_dir is not None:
        program = [str(base_dir / p) if not Path(p).is_absolute() else p for p in program]
    cases = head.get("cases", "2n^2").replace(" ", "")
    combine_section = sections.get("combine", {})
    return TestPlan(
        benchmark=head.get("benchmark"),
        program=program,
        subroutine=head.get("subroutine"),
        mark=head.get("mark"),
        spec=head.get("spec", "benchmark"),
        seed=_int(head.get("seed", "42"), "seed"),
        cases=None if cases == "2n^2" else _int(cases, "cases"),
        theta=float(head.get("theta", "0")),
        partitions=sections.get("partition", {}),
        strategy=combine_section.get("strategy"),
        base=_list(combine_section.get("base", "")),
        detector=sections.get("detector", {}),
        detector_overrides=overrides,
        args={k: _int(v, f"argument {k}") for k, v in sections.get("args", {}).items()},
        doubles=sections.get("doubles", {}),
        variants=sections.get("variants", {}),
        mutation=_mutation_config(sections["mutation"]) if "mutation" in sections else None,
        name=head.get("name", name),
        version=version,
    )


def load_plan(path: Union[str, Path]) -> TestPlan:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise PlanError(f"Cannot read plan {path}: {e}") from None
    try:
        return parse_plan(text, path.stem, path.parent)
    except PlanError as e:
        raise PlanError(f"{path}: {e}") from None


def benchmark_plan(entry: BenchmarkEntry) -> TestPlan:
    return load_plan(entry.plan_path)


# ---------------------------------------------------------------------------
# Suites
# ---------------------------------------------------------------------------

def _detector_config(settings: Dict[str, str]) -> DetectorConfig:
    try:
        return DetectorConfig(kind=settings.get("kind", "auto"),
                              repetitions=_int(settings.get("repetitions", "200"), "repetitions"),
                              tolerance=float(settings.get("tolerance", "0.1")),
                              qra_repeats=_int(settings.get("qra_repeats", "1"), "qra_repeats"))
    except DetectorError as e:
        raise PlanError(f"[detector] {e}") from None


def _selects(selector: str, frame: TestFrame) -> bool:
    displays = {c.display for c in frame.classes}
    return all(part.strip() in displays for part in selector.split(","))


def case_class(frame: TestFrame) -> str:
    """Input-class tag of a frame for trigger counts: C/S/M, else the first double or
    custom label."""
    kind = frame.quantum_kind()
    if kind is not None:
        return kind.value
    for cls in frame.classes:
        if cls.kind in (ClassKind.DOUBLE, ClassKind.CUSTOM):
            return cls.label
    return "-"


class Suite:
    """
    Concrete test cases of one plan with their detector settings.

    evaluate(program, i, rng) runs case i on any program (the base or a mutant) with
    the case's own substream of rng, so every program sees the same inputs and the
    same random draws.
    """
    def __init__(self, plan: TestPlan, program: Program, subroutine: str, spec, frames: List[TestFrame],
                 cases: List[InputBinding], configs: List[DetectorConfig],
                 oracle_bindings: Optional[Dict] = None, mark: Optional[IOMark] = None):
        self.plan = plan
        self.program = program
        self.subroutine = subroutine
        self.spec = spec
        self.frames = frames
        self.cases = cases
        self.configs = configs
        self.oracle_bindings = dict(oracle_bindings or {})
        self.mark = mark

    def evaluate(self, program: Program, index: int, rng: RandomStream) -> Verdict:
        case = self.cases[index]
        return evaluate_case(program, program.get(self.subroutine), case, self.spec,
                             rng.child("case", case.id), self.configs[index], self.oracle_bindings)

    def case_class(self, index: int) -> str:
        return case_class(self.cases[index].frame)

    def first_case_doubles(self) -> Dict:
        bindings = dict(self.oracle_bindings)
        if self.cases:
            bindings.update(self.cases[0].doubles)
        return bindings

    def comparison_domain(self) -> ComparisonDomain:
        """Classical arguments and doubles of every case, with the IO mark's inputs and outputs."""
        points = [(dict(case.classical), dict(case.doubles)) for case in self.cases]
        if self.mark is None:
            return ComparisonDomain(points)
        classical = [v.name for v in self.mark.inputs_of(VarKind.CLASSICAL)]
        return ComparisonDomain(points, classical[0] if classical else None,
                                tuple(v.name for v in self.mark.inputs_of(VarKind.QUANTUM)),
                                tuple(v.name for v in self.mark.outputs_of(VarKind.CLASSICAL)),
                                tuple(v.name for v in self.mark.outputs_of(VarKind.QUANTUM)))

    def dry_run(self, program: Program):
        """
        Run the first case of every frame on `program`. Program errors propagate; a
        mutant that no longer fits the harness (register sizes) is reported as one.
        """
        seen = set()
        for case in self.cases:
            if case.frame.label in seen:
                continue
            seen.add(case.frame.label)
            try:
                execute_case(program, program.get(self.subroutine), case, RandomStream(0), self.oracle_bindings)
            except PartitionError as e:
                raise ProgramError(str(e)) from None


def _resolve(plan: TestPlan, program: Optional[Program]) -> Tuple[Optional[BenchmarkEntry], Program, str, IOMark]:
    entry = None
    if plan.benchmark is not None:
        try:
            entry = get_benchmark(plan.benchmark)
        except KeyError as e:
            raise StageError("validate", str(e.args[0])) from None
    if program is None:
        if plan.program:
            program = load_program(*plan.program)
        elif entry is not None:
            program = entry.load()
        else:
            raise StageError("validate", "The plan names neither a benchmark nor program files")
    subroutine = plan.subroutine or (entry.subroutine if entry else program.entry)
    mark_text = plan.mark or (entry.mark if entry else None)
    if mark_text is None:
        raise StageError("validate", "No IO mark for the subroutine under test")
    mark = parse_io_mark(mark_text)
    mark.validate_against(program.get(subroutine))
    return entry, program, subroutine, mark


def _apply_doubles(plan: TestPlan, program: Program) -> Tuple[Program, Dict]:
    available = builtin_doubles()
    bindings = {}
    for name, label in plan.doubles.items():
        if label not in available:
            raise StageError("validate", f"Unknown test double '{label}' for '{name}'")
        if name in program.subroutines:
            program = substitute(program, name, available[label])
        else:
            bindings[name] = available[label]
    return program, bindings


def _partition(plan: TestPlan, entry: Optional[BenchmarkEntry], mark: IOMark) -> Dict[str, List[EquivalenceClass]]:
    classes = {}
    for var in mark.inputs:
        text = plan.partitions.get(var.name)
        if text is None:
            raise StageError("validate", f"No partition for input '{var.name}'")
        custom = doubles = None
        criterion = buckets = None
        if text == "custom":
            custom = (entry.custom_classes if entry else {}).get(var.name)
            if not custom:
                raise StageError("partition", f"No custom classes for '{var.name}'")
        elif var.kind == VarKind.SUBROUTINE:
            doubles = (entry.doubles if entry else {}).get(var.name)
            criterion = None if text == "doubles" else text
        elif var.kind == VarKind.QUANTUM:
            criterion = text
        else:
            buckets = text
        classes[var.name] = partition_variable(var, criterion, buckets, doubles, custom)
    return classes


def _combine(expression: str, classes: Dict[str, List[EquivalenceClass]], base: Sequence[str]) -> List[TestFrame]:
    try:
        tree = _COMBINE_GRAMMAR.parse_string(expression, parse_all=True)[0]
    except pp.ParseBaseException as e:
        raise StageError("combine", f"column {e.col}: {e.msg}") from None
    used = []

    def build(node):
        if isinstance(node, str):
            if node not in classes:
                raise StageError("combine", f"'{node}' is not a partitioned input")
            used.append(node)
            return classes[node]
        strategy, factors = node[0], [build(child) for child in node[1:]]
        base_frame = frame_from_labels(factors, base) if Strategy(strategy) == Strategy.BCC else None
        return combine(factors, strategy, base_frame)

    frames = build(tree)
    missing = sorted(set(classes) - set(used))
    if missing:
        raise StageError("combine", f"Inputs {missing} are not combined")
    return [f if isinstance(f, TestFrame) else TestFrame((f,)) for f in frames]


def build_suite(plan: TestPlan, program: Optional[Program] = None, rng: Optional[RandomStream] = None,
                use_doubles: bool = True) -> Suite:
    """Run the validate, partition, combine and sample stages."""
    rng = rng or RandomStream(plan.seed)
    try:
        entry, program, subroutine, mark = _resolve(plan, program)
        unknown = sorted(set(plan.partitions) - {v.name for v in mark.inputs})
        if unknown:
            raise StageError("validate", f"Partitions name unknown variables {unknown}")
        if plan.spec == "identity":
            spec = IdentitySpec()
        elif entry is not None:
            spec = entry.spec
        else:
            raise StageError("validate", "A plan without a benchmark needs 'spec = identity'")
        bindings = {}
        if use_doubles:
            program, bindings = _apply_doubles(plan, program)
    except (ProgramError, SpecError, PlanError, OSError) as e:
        raise e if isinstance(e, StageError) else StageError("validate", str(e)) from None

    try:
        classes = _partition(plan, entry, mark)
    except PartitionError as e:
        raise StageError("partition", str(e)) from None

    try:
        if not classes:
            frames = [TestFrame(())]
        elif plan.strategy:
            frames = _combine(plan.strategy, classes, plan.base)
        else:
            frames = combine([classes[v.name] for v in mark.inputs], Strategy.ACOC)
    except PartitionError as e:
        raise StageError("combine", str(e)) from None

    sub = program.get(subroutine)
    default = _detector_config(plan.detector)
    cases: List[InputBinding] = []
    configs: List[DetectorConfig] = []
    try:
        for frame in frames:
            frame_cases = sample_cases(frame, mark, sub, rng.child("sample"), plan.cases, plan.theta, plan.args)
            settings = dict(plan.detector)
            for selector, override in plan.detector_overrides:
                if _selects(selector, frame):
                    settings.update(override)
            config = _detector_config(settings) if settings != plan.detector else default
            cases.extend(frame_cases)
            configs.extend([config] * len(frame_cases))
    except PartitionError as e:
        raise StageError("sample", str(e)) from None
    return Suite(plan, program, subroutine, spec, frames, cases, configs, bindings, mark)


@dataclass
class FrameResult:
    label: str
    case_ids: List[str] = field(default_factory=list)
    verdicts: List[Verdict] = field(default_factory=list)

    @property
    def cases(self) -> int:
        return len(self.verdicts)

    def count(self, status: VerdictStatus) -> int:
        return sum(v.status == status for v in self.verdicts)

    @property
    def failed(self) -> int:
        return self.count(VerdictStatus.FAIL)

    @property
    def passed(self) -> int:
        return self.count(VerdictStatus.PASS)


@dataclass
class SuiteResult:
    plan: str
    subroutine: str
    seed: int
    frames: List[FrameResult]
    variants: Dict[str, Verdict] = field(default_factory=dict)
    wall_clock: float = 0.0

    def _all(self) -> List[Verdict]:
        return [v for f in self.frames for v in f.verdicts] + list(self.variants.values())

    @property
    def total(self) -> int:
        return sum(f.cases for f in self.frames)

    @property
    def failed(self) -> int:
        return sum(v.status == VerdictStatus.FAIL for v in self._all())

    @property
    def inconclusive(self) -> int:
        return sum(v.status == VerdictStatus.INCONCLUSIVE for v in self._all())

    @property
    def all_passed(self) -> bool:
        return all(v.status in (VerdictStatus.PASS, VerdictStatus.SKIPPED) for v in self._all())

    def to_dict(self) -> Dict:
        return {
            "plan": self.plan,
            "subroutine": self.subroutine,
            "seed": self.seed,
            "frames": [{"label": f.label, "cases": f.cases, "passed": f.passed, "failed": f.failed,
                        "verdicts": {cid: v.to_dict() for cid, v in zip(f.case_ids, f.verdicts)}}
                       for f in self.frames],
            "variants": {k: v.to_dict() for k, v in self.variants.items()},
            "wall_clock": self.wall_clock,
        }


def _case_unit(state, index: int) -> Verdict:
    program, suite, rng = state
    return suite.evaluate(program, index, rng)


def _run_variants(plan: TestPlan, suite: Suite, rng: RandomStream) -> Dict[str, Verdict]:
    settings = plan.variants
    name = settings.get("subroutine", suite.subroutine)
    n = _int(settings.get("n", "3"), "variants n")
    k_text = settings.get("k", "-3..3")
    lo, _, hi = k_text.partition("..")
    k_values = range(_int(lo, "k"), _int(hi or lo, "k") + 1)
    inputs = _int(settings["inputs"], "inputs") if "inputs" in settings else None
    program = suite.program
    try:
        sub = program.get(name)
    except ProgramError as e:
        raise StageError("validate", str(e)) from None
    inverse = _derived(derive_inverse, sub)
    controlled = _derived(derive_controlled, sub)
    power = _derived(derive_power, sub, inverse) if inverse is not None else None
    return test_variants(program, sub, n, rng.child("variants"), inverse, controlled, power, k_values,
                         dict(plan.args), inputs, suite.first_case_doubles())


def _derived(derive, *args):
    """A derived variant, or None when the subroutine has none (measurement, reset)."""
    try:
        return derive(*args)
    except ProgramError:
        return None


def run_plan(plan: TestPlan, program: Optional[Program] = None, rng: Optional[RandomStream] = None,
             jobs: int = 1, use_doubles: bool = True, verbose: bool = True) -> SuiteResult:
    """
    Run a plan end to end.

    Args:
        plan: The test plan
        program: Program to test (default: the plan's benchmark or program files)
        rng: Master stream (default: seeded with the plan seed)
        jobs: Worker processes for case execution
        use_doubles: Apply the plan's [doubles] substitutions
        verbose: Print progress

    Raises:
        StageError: naming the stage that could not be completed
    """
    start = time.time()
    rng = rng or RandomStream(plan.seed)
    suite = build_suite(plan, program, rng, use_doubles)
    if verbose:
        print(f"\n{'=' * 70}")
        print(f"PLAN: {plan.name}  ({suite.subroutine}, seed {plan.seed})")
        print(f"{'=' * 70}")
        print(f"  {len(suite.frames)} frame(s), {len(suite.cases)} case(s)")

    try:
        verdicts = parallel_map(_case_unit, len(suite.cases), jobs, (suite.program, suite, rng))
    except (ProgramError, PartitionError, SpecError) as e:
        raise StageError("execute", str(e)) from None

    frames: Dict[str, FrameResult] = {f.label: FrameResult(f.label) for f in suite.frames}
    for case, verdict in zip(suite.cases, verdicts):
        frames[case.frame.label].case_ids.append(case.id)
        frames[case.frame.label].verdicts.append(verdict)
    bad = [(c.id, v) for c, v in zip(suite.cases, verdicts) if v.status == VerdictStatus.INCONCLUSIVE]
    if bad and all(v.status == VerdictStatus.INCONCLUSIVE for v in verdicts):
        cid, v = bad[0]
        raise StageError("detect", f"no case could be judged ({cid}: {v.note}: {v.error})")

    variants = _run_variants(plan, suite, rng) if plan.variants else {}
    result = SuiteResult(plan.name, suite.subroutine, plan.seed, list(frames.values()), variants,
                         time.time() - start)
    if verbose:
        for frame in result.frames:
            mark = "✓" if frame.failed == 0 else "✗"
            print(f"  {mark} {frame.label:<28} {frame.passed:>4}/{frame.cases:<4} pass")
        for relation, verdict in variants.items():
            print(f"  {'✓' if verdict.passed else '-' if verdict.status == VerdictStatus.SKIPPED else '✗'} "
                  f"variants:{relation:<19} {verdict.status.value}")
        print(f"  Done ({result.wall_clock:.2f}s)")
    return result


# ---------------------------------------------------------------------------
# Mutation runs
# ---------------------------------------------------------------------------

def run_mutation_plan(plan: TestPlan, jobs: int = 1, verbose: bool = True,
                      keep_case: Optional[Callable[[str], bool]] = None
                      ) -> Tuple[MutationReport, List[SurvivorClass], List[Mutant]]:
    """
    Mutation analysis of a plan: build its suite, enumerate mutants of the benchmark's
    mutation target, run them and classify the survivors.

    `keep_case(class)` restricts the suite to cases of the accepted input classes.
    """
    config = plan.mutation or MutationConfig()
    rng = RandomStream(plan.seed)
    suite = build_suite(plan, rng=rng)
    if keep_case is not None:
        kept = [i for i in range(len(suite.cases)) if keep_case(suite.case_class(i))]
        suite.cases = [suite.cases[i] for i in kept]
        suite.configs = [suite.configs[i] for i in kept]
    target = get_benchmark(plan.benchmark).target if plan.benchmark else suite.subroutine
    if verbose:
        print(f"\n{'=' * 70}")
        print(f"MUTATION ANALYSIS: {plan.name} (target {target})")
        print(f"{'=' * 70}")
        print(f"  {config}")
    mutants = enumerate_mutants(suite.program, target, config, dry_run=suite.dry_run)
    if verbose:
        print(f"  {len(mutants)} mutants, {len(suite.cases)} cases")
    report = run_mutation_analysis(suite.program, mutants, suite, rng, jobs, config.short_circuit, plan.name,
                                   verbose)
    survivors = classify_survivors(report, suite.program, mutants, oracle_bindings=suite.oracle_bindings,
                                   domain=suite.comparison_domain())
    return report, survivors, mutants


# ---------------------------------------------------------------------------
# Integration
# ---------------------------------------------------------------------------

def integration_path(program: Program, entry: Optional[str] = None) -> List[str]:
    """Subroutines the entry depends on (and the entry), callees first."""
    graph = dependency_graph(program)
    entry = entry or program.entry
    wanted = set(reachable(graph, entry))
    return [name for name in integration_order(graph)
            if name in wanted and graph.nodes[name].get("kind") == "subroutine"]


def benchmark_plans(program: Program) -> Dict[str, TestPlan]:
    """Shipped plans whose subroutine under test is defined in `program`."""
    plans = {}
    for entry in builtin_benchmarks():
        if entry.subroutine in program.subroutines and entry.plan_path.exists() and entry.subroutine not in plans:
            plans[entry.subroutine] = benchmark_plan(entry)
    return plans


def run_integration(program: Program, plans: Dict[str, TestPlan], rng: Optional[RandomStream] = None,
                    continue_on_fail: bool = False, jobs: int = 1,
                    verbose: bool = True) -> List[Tuple[str, SuiteResult]]:
    """
    Unit plans in integration order, then the entry on the fully integrated program.

    Callees are tested first. A plan with [doubles] runs with its dependencies
    replaced by test doubles; the entry's plan is then run once more on the real
    program. Stops after the first failing level unless continue_on_fail.
    """
    path = integration_path(program)
    missing = [name for name in path if name not in plans]
    if missing:
        raise PlanError(f"No plan for {missing} on the integration path of {program.entry}")
    if verbose:
        print(f"\nIntegration order: {' -> '.join(path)}")

    stages = [(name, True, f"{name} [doubles]" if plans[name].doubles else name) for name in path]
    if plans[program.entry].doubles:
        stages.append((program.entry, False, f"{program.entry} [integrated]"))

    results = []
    for name, with_doubles, label in stages:
        plan = plans[name]
        stream = (rng or RandomStream(plan.seed)).child("integration", label)
        result = run_plan(plan, program, stream, jobs, use_doubles=with_doubles, verbose=verbose)
        results.append((label, result))
        if not result.all_passed and not continue_on_fail:
            if verbose:
                print(f"  Stopping: {label} has failures")
            break
    return results


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

REPORT_COLUMNS = ("program", "class", "cases", "trigger", "rate") + tuple(t.value for t in ALL_TYPES)


def format_rate(hits: int, total: int) -> str:
    return f"{hits / total:.4f}" if total else "-"


def _suite_rows(name: str, result: SuiteResult) -> List[Tuple[List[str], float]]:
    rows = []
    for frame in result.frames:
        rows.append(([name, frame.label, str(frame.cases), str(frame.failed), format_rate(frame.failed, frame.cases)]
                     + ["-"] * len(ALL_TYPES), result.wall_clock))
    for relation, verdict in result.variants.items():
        hit = int(verdict.failed)
        rows.append(([name, f"variants:{relation}", "1", str(hit), format_rate(hit, 1)] + ["-"] * len(ALL_TYPES),
                     result.wall_clock))
    return rows


def _mutation_rows(report: MutationReport) -> List[Tuple[List[str], float]]:
    rows = []
    total = len(report.results)
    triggers = report.trigger_counts()
    for cls, cases in report.class_cases.items():
        counts = triggers.get(cls, {})
        hits = sum(1 for r in report.results if r.triggered.get(cls))
        rows.append(([report.program, cls, str(cases), str(hits), format_rate(hits, total)]
                     + [str(counts.get(t.value, 0)) for t in ALL_TYPES], report.wall_clock))
    per_type = report.per_type()
    killed = len(report.killed)
    rows.append(([report.program, "all", str(report.base_cases), str(killed), format_rate(killed, total)]
                 + [f"{per_type[t.value]['killed']}/{per_type[t.value]['mutants']}" for t in ALL_TYPES],
                 report.wall_clock))
    return rows


def emit_report(results: Sequence, fmt: str = "table") -> str:
    """
    Render suite results ((name, SuiteResult) pairs or SuiteResults) and mutation
    reports. For suites `trigger` counts failing cases; for mutation reports it counts
    mutants killed by the class, split by mutation type in the last columns.

    TSV output has one header row, tab-separated cells, rates with four decimals and
    no timing, so identical runs give identical bytes. The table adds run time.
    """
    if fmt not in ("table", "tsv"):
        raise PlanError(f"Unknown report format '{fmt}'")
    rows: List[Tuple[List[str], float]] = []
    for item in results:
        if isinstance(item, MutationReport):
            rows.extend(_mutation_rows(item))
        elif isinstance(item, tuple):
            rows.extend(_suite_rows(item[0], item[1]))
        else:
            rows.extend(_suite_rows(item.plan, item))

    if fmt == "tsv":
        lines = ["\t".join(REPORT_COLUMNS)]
        lines += ["\t".join(cells) for cells, _ in rows]
        return "\n".join(lines) + "\n"

    header = list(REPORT_COLUMNS) + ["time (s)"]
    body = [cells + [f"{seconds:.2f}"] for cells, seconds in rows]
    widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(w) if i < 2 else cell.rjust(w) for i, (cell, w) in enumerate(zip(row, widths)))
             for row in [header] + body]
    lines.insert(1, "-" * len(lines[0]))
    return "\n".join(lines) + "\n"


def run_silent(fn, *args, **kwargs):
    """Call fn with stdout swallowed; returns (result, elapsed seconds)."""
    old_stdout = sys.stdout
    sys.stdout = StringIO()
    start = time.time()
    try:
        result = fn(*args, **kwargs)
    finally:
        sys.stdout = old_stdout
    return result, time.time() - start
