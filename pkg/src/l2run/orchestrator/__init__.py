"""Parallel experience collection: learner, samplers, evaluator and their wire protocol."""

from .learner import InMemoryChannel, Learner, LearnerServer, LearnerSettings, handle_request, parse_addr
from .models import ACEModel, DDPGModel, PatternDQNModel, PolicySnapshot
from .protocol import (MAX_FRAME, EpisodeRecord, Message, MsgType, StreamDecoder, decode_message, encode_message,
                       episode_message, json_message, parse_episode, parse_json, parse_weights, weights_message)
from .sampler import (ADDR_ENV, Backoff, RemoteLearner, SamplerCore, SamplerSettings, evaluate_policy,
                      learner_address, run_sampler, sampler_seeds)

__all__ = [
    "ACEModel", "ADDR_ENV", "Backoff", "DDPGModel", "EpisodeRecord", "InMemoryChannel", "Learner", "LearnerServer",
    "LearnerSettings", "MAX_FRAME", "Message", "MsgType", "PatternDQNModel", "PolicySnapshot", "RemoteLearner",
    "SamplerCore", "SamplerSettings", "StreamDecoder", "decode_message", "encode_message", "episode_message",
    "evaluate_policy", "handle_request", "json_message", "learner_address", "parse_addr", "parse_episode",
    "parse_json", "parse_weights", "run_sampler", "sampler_seeds", "weights_message",
]
