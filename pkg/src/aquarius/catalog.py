"""Fixed counter and signal catalogs shared by the flow table and the store.

Ids are part of the region layout and must never be reordered.
"""

COUNTERS = (
    "n_flow_on",
    "n_flow_total",
    "n_packet",
    "n_byte",
    "n_syn",
    "n_fin",
    "n_rst",
    "n_miss",
)

SIGNALS = (
    "flow_duration",
    "handshake_rtt",
    "flow_interarrival",
    "pkt_interarrival",
    "flow_size_c2s",
    "request_size",
    "flow_pkts",
    "byte_rate",
    "win_size",
    "ack_gap",
    "bytes_in_flight_proxy",
    "concurrent_flows_at_arrival",
    "syn_gap",
)

# summary statistics computed per signal when building feature rows
STATS = ("mean", "std", "p50", "p90", "ewm")

COUNTER_ID = {name: i for i, name in enumerate(COUNTERS)}
SIGNAL_ID = {name: i for i, name in enumerate(SIGNALS)}

N_FLOW_ON = 0
N_FLOW_TOTAL = 1
N_PACKET = 2
N_BYTE = 3
N_SYN = 4
N_FIN = 5
N_RST = 6
N_MISS = 7

FLOW_DURATION = 0
HANDSHAKE_RTT = 1
FLOW_INTERARRIVAL = 2
PKT_INTERARRIVAL = 3
FLOW_SIZE_C2S = 4
REQUEST_SIZE = 5
FLOW_PKTS = 6
BYTE_RATE = 7
WIN_SIZE = 8
ACK_GAP = 9
BYTES_IN_FLIGHT_PROXY = 10
CONCURRENT_FLOWS_AT_ARRIVAL = 11
SYN_GAP = 12

N_FEATURES = len(COUNTERS) + len(SIGNALS) * len(STATS)  # 73
