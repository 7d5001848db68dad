"""
Services Package
Representation updates, rewards, the imitation agent, training and evaluation
"""

from .exceptions import RIRLError, TrainingStepError, UsageError

__all__ = ['RIRLError', 'TrainingStepError', 'UsageError']
