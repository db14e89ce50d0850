"""casescribe: verifiable, privacy-gated reporting over prototype retrieval.

The pipeline distills prototypes into a discrete memory bank, releases cards
through a (k, l) signature gate, computes exact case-prototype differentials,
runs a barrier-critic repair loop around a pluggable scribe backend, and
evaluates faithfulness and disclosure risk.
"""

from .backbone import (
    BackboneOutput,
    NeighborEntry,
    PrototypeRecord,
    QueryCase,
    MembershipLabel,
    SyntheticCohort,
    SyntheticCohortSpec,
    load_backbone_outputs,
    synth_cohort,
    write_backbone_outputs,
)
from .config import PipelineConfig, load_config
from .critic import BarrierCritic, CriticVerdict, Violation, critic_evaluate
from .differential import (
    Differential,
    GroundedState,
    VisibleEvidence,
    differential,
    discordance,
    supervise,
    tabular_only_state,
)
from .errors import CaseScribeError
from .gate import (
    FrontierPoint,
    GateConfig,
    GatedCard,
    GateIndex,
    ReleaseSignature,
    apply_gate,
    evidence_utility,
    fit_gate,
    signature,
    sweep_frontier,
)
from .loop import OptimizationOutcome, optimize_report
from .memory import (
    Assertion,
    CaseCard,
    ProtoCard,
    QuantizedRecord,
    TabularSchema,
    build_casecard,
    build_protocard,
    consensus_assertions,
    quantize,
)
from .metrics import CsfResult, csf
from .attacks import AttackResult, LinkTrial, ReleasedArtifact, RegistryRecord, aia, link_top1, mia
from .report import Claim, Report, extract_claims, report_from_dict
from .scribes import AdversarialScribe, HttpScribe, TemplateScribe
from .taxonomy import Taxonomy, load_taxonomy, prefix_bucket_map

__version__ = "0.1.0"
