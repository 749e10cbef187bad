from .facts import (FactEvalResult, FactEvaluator, FactSet, SalientEvalResult, compute_prh, compute_salient,
                    parse_list_response, rank_salient_features, result_from_transcript)
from .judge import (EchoJudge, FixtureJudge, JudgeClient, LexicalJudge, RemoteJudge, Transcript,
                    load_templates)
from .metrics import bleu4, corpus_bleu4, lcs_length, rouge_l
