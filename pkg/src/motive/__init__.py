"""Joint inference of why people act, from visual classifiers and language potentials."""

from .arpa import NGramModel, load_arpa, logprob_word, score_sequence
from .graph import Configuration, GraphSpec, ScoredConfig, clamped_kbest, kbest, max_marginals, score_config
from .knowledge import PotentialTensor, TemplateSet, Vocabulary, build_tensor, default_factor_list, standardize
from .learn import Model, StructuredSVM, train_multiclass_baseline, train_ssvm

__version__ = "0.1.0"
