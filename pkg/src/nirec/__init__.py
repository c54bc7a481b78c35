"""Zero-shot next-item recommendation with LLM prompt chains."""

from .candidates import CandidateSet, FilterParams, ItemFilter, UserFilter
from .dataset import Catalog, Split, load_movielens
from .evaluation import EvalRecord, PopularityRecommender, Summary, aggregate, hit_at_k, ndcg_at_k
from .extraction import AnswerExtractor, ExtractedRanking
from .llm import CompletionRequest, CompletionResponse, LLMGateway
from .pipeline import RunConfig, run, run_ablation, run_sweep

__version__ = "0.1.0"
