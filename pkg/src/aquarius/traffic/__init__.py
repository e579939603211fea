"""Synthetic TCP workloads, processor-sharing servers and trace files."""

from .model import (ConfigError, Direction, FiveTuple, PacketEvent, ServerModel, TcpFlags,
                    format_flags, parse_flags, server_advance, TCP)
from .workload import FILE_SIZES, KIND_CPU, KIND_FLOOD, KIND_IO, MSS, FlowBatch, WorkloadSpec, sample_flows
from .engine import Engine, FlowRecord, ecmp_picker, gen_trace, make_servers
from .io import HEADER, TraceFormatError, iter_trace, load_trace, write_trace

__all__ = [
    "ConfigError", "Direction", "FiveTuple", "PacketEvent", "ServerModel", "TcpFlags", "TCP",
    "format_flags", "parse_flags", "server_advance", "FILE_SIZES", "KIND_CPU", "KIND_FLOOD", "KIND_IO",
    "MSS", "FlowBatch", "WorkloadSpec", "sample_flows", "Engine", "FlowRecord", "ecmp_picker",
    "gen_trace", "make_servers", "HEADER", "TraceFormatError", "iter_trace", "load_trace", "write_trace",
]
