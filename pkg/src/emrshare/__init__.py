"""Privacy-preserving medical record sharing: extraction signatures, policy-gated
cloud storage, a credit-ranked consortium chain and patient permission contracts."""

from .ces import (Ceas, CesTag, ExtractedSignature, FullSignature, GroupParams, PRODUCTION_PARAMS,
                  TEST_PARAMS, extract, group_profile, keygen, recover_private_key, sign,
                  verify_extracted, verify_full)
from .errors import EmrShareError
from .scenario import Scenario, load_scenario, parse_scenario
from .workflow import RunResult, run_scenario

__all__ = [
    "Ceas", "CesTag", "ExtractedSignature", "FullSignature", "GroupParams", "PRODUCTION_PARAMS",
    "TEST_PARAMS", "extract", "group_profile", "keygen", "recover_private_key", "sign",
    "verify_extracted", "verify_full", "EmrShareError", "Scenario", "load_scenario",
    "parse_scenario", "RunResult", "run_scenario",
]

__version__ = "0.1.0"
