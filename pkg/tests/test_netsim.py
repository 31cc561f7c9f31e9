import pytest

from dagswap.errors import ParamError, UnknownNode
from dagswap.netsim import AdversarySpec, ScenarioConfig, SimNet, parse_scenario, spawn


def collector(inbox):
    def handler(src, frame):
        inbox.append((src, frame))
    return handler


class TestDelivery:
    def test_latency(self):
        net = SimNet(seed=0, latency_ms=10.0, bytes_per_ms=1e9)
        inbox = []
        net.register(0, collector([]))
        net.register(1, collector(inbox))
        net.send(0, 1, b"\x01hello")
        net.run_until_quiescent()
        assert net.now == pytest.approx(10.0, abs=1e-6)
        assert inbox == [(0, b"\x01hello")]

    def test_serialization_delay(self):
        net = SimNet(seed=0, latency_ms=10.0, bytes_per_ms=100.0)
        inbox = []
        net.register(0, collector([]))
        net.register(1, collector(inbox))
        net.send(0, 1, bytes(1000))  # 10 ms on the wire
        net.run_until_quiescent()
        assert net.now == pytest.approx(20.0, abs=1e-6)

    def test_unknown_node(self):
        net = SimNet(seed=0)
        net.register(0, collector([]))
        with pytest.raises(UnknownNode):
            net.send(0, 9, b"x")

    def test_full_drop_link_terminates(self):
        net = SimNet(seed=0, drop_rate=1.0)
        inbox = []
        net.register(0, collector([]))
        net.register(1, collector(inbox))
        for _ in range(50):
            net.send(0, 1, b"\x01x")
        net.run_until_quiescent()
        assert inbox == []  # dropped frames have no observable effect
        assert net.trace == []

    def test_per_link_fifo_order(self):
        net = SimNet(seed=0, latency_ms=5.0, bytes_per_ms=10.0)
        inbox = []
        net.register(0, collector([]))
        net.register(1, collector(inbox))
        frames = [bytes([0x01, i]) * (i + 1) for i in range(10)]
        for frame in frames:
            net.send(0, 1, frame)
        net.run_until_quiescent()
        assert [f for _, f in inbox] == frames

    def test_timers_cancelable(self):
        net = SimNet(seed=0)
        fired = []
        keep = net.schedule(5.0, lambda: fired.append("keep"))
        drop = net.schedule(5.0, lambda: fired.append("drop"))
        drop.cancel()
        net.run_until_quiescent()
        assert fired == ["keep"]


class TestDeterminism:
    def run_traffic(self, seed):
        net = SimNet(seed=seed, latency_ms=7.0, drop_rate=0.2)
        inboxes = {i: [] for i in range(4)}
        for i in range(4):
            net.register(i, collector(inboxes[i]))
        rng = net.rng
        for n in range(2000):
            src = rng.randrange(4)
            dst = (src + 1 + rng.randrange(3)) % 4
            net.send(src, dst, bytes([0x01]) + n.to_bytes(2, "big"))
        net.run_until_quiescent()
        return net.trace_digest()

    def test_identical_seed_identical_trace(self):
        assert self.run_traffic(123) == self.run_traffic(123)

    def test_different_seed_different_trace(self):
        assert self.run_traffic(123) != self.run_traffic(124)

    def test_spawn_identity_sets_deterministic(self):
        def ids(seed):
            net = SimNet(seed=seed)
            return [p.node_id for p in spawn(net, 16, bootstrap_r=2)]
        assert ids(5) == ids(5)
        assert ids(5) != ids(6)


class TestSpawn:
    def test_single_isolated_node(self):
        net = SimNet(seed=0)
        peers = spawn(net, 1)
        assert len(peers) == 1
        assert len(peers[0].dht.table) == 0

    def test_two_nodes_know_each_other(self):
        net = SimNet(seed=0)
        a, b = spawn(net, 2, bootstrap_r=1)
        assert b.node_id in a.dht.table
        assert a.node_id in b.dht.table

    def test_spawn_requires_a_node(self):
        with pytest.raises(ValueError):
            spawn(SimNet(seed=0), 0)


class TestScenario:
    def test_parse_round_trip(self):
        text = (
            "seed = 9\n"
            "nodes = 12\n"
            "latency_ms = uniform:5,15\n"
            "drop_rate = 0.1\n"
            "adversary = drop_all\n"
            "adversary_fraction = 0.25\n"
            "horizon_ms = 90000\n"
            "fetch = QmExample\n"
        )
        cfg = parse_scenario(text)
        assert cfg.seed == 9 and cfg.nodes == 12
        assert cfg.latency_ms == "uniform:5,15"
        assert cfg.extras["fetch"] == "QmExample"
        again = parse_scenario(cfg.to_text())
        assert again == cfg

    def test_comments_and_blank_lines(self):
        cfg = parse_scenario("# a comment\n\nseed = 4  # trailing\n")
        assert cfg.seed == 4

    def test_bad_line(self):
        with pytest.raises(ParamError):
            parse_scenario("seed 4")

    def test_adversary_spec_validation(self):
        with pytest.raises(ParamError):
            AdversarySpec("explode", 0.5)
        with pytest.raises(ParamError):
            AdversarySpec("drop_all", 1.5)
        spec = ScenarioConfig(adversary="drop_queries",
                              adversary_fraction=0.5).adversary_spec()
        assert spec.behavior == "drop_queries"


class TestAdversaries:
    def test_drop_all_node_is_silent(self):
        net = SimNet(seed=3)
        peers = spawn(net, 8, bootstrap_r=2,
                      adversary=AdversarySpec("drop_all", 0.25, start_ms=0.0))
        silent = [p for p in peers if p.adversary == "drop_all"]
        assert silent  # fraction rounds to at least two of eight
        honest = next(p for p in peers if p.adversary == "none")
        mark = len(net.trace)
        honest.dht.bootstrap([silent[0].multiaddr])
        net.run_until_quiescent()
        kinds = [k for _, src, dst, k, _ in net.trace[mark:] if src == silent[0].addr]
        assert kinds == []  # no PONG came back

    def test_uniform_latency_spec(self):
        net = SimNet(seed=1, latency_spec="uniform:5,15")
        latencies = {net._link(0, i).latency for i in range(20)}
        assert all(5 <= l <= 15 for l in latencies)
        assert len(latencies) > 1
