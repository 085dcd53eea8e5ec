"""Spam filtering at the sending mail server, simulated in virtual time."""

from .corpus import CorpusRecord, GeneratorParams, generate_corpus, load_corpus, save_corpus
from .message import (
    ContentDigest,
    Decision,
    EmailAddress,
    EmailMessage,
    Stage,
    Verdict,
    content_digest,
    encoded_size,
    parse_address,
    parse_ip,
)
from .netsim import PROFILES, CostModel, VirtualClock, World, cost_profile
from .pipeline import FilterContext, Mount, PipelineConfig, filter_once, run_pipeline
from .scenarios import (
    ComparisonTable,
    FilterSetup,
    ScenarioMetrics,
    ScenarioSpec,
    compare_scenarios,
    default_world,
    run_scenario,
    speedup,
)

__version__ = "0.1.0"
