"""
Attacks Module
Adversarial example constructions against classify and purify-then-classify pipelines.
"""

from .base_attack import AttackResult, BaseAttack, enforce_budget, retry_on_failure
from .blackbox import BlackBoxAttack
from .bpda import BPDAAttack
from .cw import CWL2Attack
from .fgsm import FGSMAttack
from .oracle_client import LabelOracleClient
from .reparam import ReparamAttack

__all__ = [
    # Base classes
    'BaseAttack',
    'AttackResult',
    'enforce_budget',
    'retry_on_failure',
    'LabelOracleClient',

    # Attack families
    'FGSMAttack',
    'CWL2Attack',
    'ReparamAttack',
    'BPDAAttack',
    'BlackBoxAttack',
]

# Attack registry, keyed by AttackFamily value
ATTACKS = {
    'fgsm': FGSMAttack,
    'cw_l2': CWL2Attack,
    'reparam': ReparamAttack,
    'bpda': BPDAAttack,
    'blackbox': BlackBoxAttack,
}


def get_attack_class(family: str):
    """
    Get attack class by family name.

    Args:
        family: AttackFamily value

    Returns:
        Attack class, or None for an unknown family
    """
    return ATTACKS.get(family)


def list_attacks():
    """List all available attack families"""
    return list(ATTACKS.keys())
