use std::collections::BTreeMap;

use num_bigint::BigUint;
use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::sim::{connected_components, random_connected, rng::substream, NodeRef, Status};

fn line(n: u32) -> TopologyGraph {
    let mut g = TopologyGraph::new();
    for i in 0..n {
        g.add_node(NodeRef(i));
    }
    for i in 1..n {
        g.add_link(NodeRef(i - 1), NodeRef(i), 1).unwrap();
    }
    g
}

fn backbone(topo: &TopologyGraph, seed: u64) -> Backbone {
    Backbone::new(KiraConfig::default(), topo, substream(seed, "kira"))
}

/// Runs gossip rounds and returns the 1-based index of the last round that
/// changed any table (0 if none did).
fn rounds(b: &mut Backbone, topo: &TopologyGraph, now: &mut u64, count: usize) -> usize {
    let mut last_change = 0;
    for round in 1..=count {
        *now += 500;
        if !b.gossip_round(topo, *now).delta.is_empty() {
            last_change = round;
        }
    }
    last_change
}

fn id_with_prefix(first: u8) -> NodeId {
    let mut b = [0u8; ID_BYTES];
    b[0] = first;
    NodeId(b)
}

fn app(b: &Backbone, s: NodeRef, d: NodeRef) -> ControlMessage {
    ControlMessage::app(b.id_of(s).unwrap(), b.id_of(d).unwrap(), 64, Vec::new())
}

#[test]
fn xor_ordering_matches_big_integer_oracle() {
    let mut rng = substream(11, "xor-oracle");
    let big = |id: &NodeId, other: &NodeId| {
        BigUint::from_bytes_be(&id.0) ^ BigUint::from_bytes_be(&other.0)
    };
    for _ in 0..100 {
        let [a, b, c, d] = [(); 4].map(|_| NodeId::random(&mut rng));
        let ours = xor_distance(&a, &b).cmp(&xor_distance(&c, &d));
        let oracle = big(&a, &b).cmp(&big(&c, &d));
        assert_eq!(ours, oracle);
        assert_eq!(BigUint::from_bytes_be(&xor_distance(&a, &b).0), big(&a, &b));
    }
    let top = id_with_prefix(0x80);
    assert_eq!(
        BigUint::from_bytes_be(&xor_distance(&top, &NodeId::default()).0),
        BigUint::from(1u8) << 159u32
    );
}

#[test]
fn linked_pair_learns_each_other_in_one_round() {
    let topo = line(2);
    let mut b = backbone(&topo, 1);
    let mut now = 0;
    rounds(&mut b, &topo, &mut now, 1);
    for (me, other) in [(0, 1), (1, 0)] {
        let c = *b
            .node(NodeRef(me))
            .unwrap()
            .table
            .get(&b.id_of(NodeRef(other)).unwrap())
            .unwrap();
        assert_eq!((c.hops, c.next_hop), (1, NodeRef(other)));
    }
}

#[test]
fn path_of_three_after_two_rounds() {
    let topo = line(3);
    let mut b = backbone(&topo, 2);
    let mut now = 0;
    rounds(&mut b, &topo, &mut now, 2);
    let c = *b
        .node(NodeRef(0))
        .unwrap()
        .table
        .get(&b.id_of(NodeRef(2)).unwrap())
        .unwrap();
    assert_eq!((c.hops, c.next_hop), (2, NodeRef(1)));
    assert_eq!(
        b.next_hop(NodeRef(0), &b.id_of(NodeRef(2)).unwrap()),
        NextHop::Forward(NodeRef(1))
    );
    assert_eq!(
        b.next_hop(NodeRef(0), &b.id_of(NodeRef(0)).unwrap()),
        NextHop::Local
    );
}

#[test]
fn isolated_node_has_no_route() {
    let mut topo = line(2);
    topo.add_node(NodeRef(2));
    let mut b = backbone(&topo, 3);
    let mut now = 0;
    rounds(&mut b, &topo, &mut now, 3);
    let dst = b.id_of(NodeRef(0)).unwrap();
    assert_eq!(b.next_hop(NodeRef(2), &dst), NextHop::NoRoute);
}

#[test]
fn route_to_self_is_empty_delivery() {
    let topo = line(3);
    let b = backbone(&topo, 4);
    assert_eq!(
        b.route(&topo, &app(&b, NodeRef(1), NodeRef(1))),
        RouteOutcome::Delivered {
            path: vec![],
            steps: vec![]
        }
    );
}

#[test]
fn route_across_partition_is_no_route() {
    let mut topo = line(6);
    let mut b = backbone(&topo, 5);
    let mut now = 0;
    rounds(&mut b, &topo, &mut now, 8);
    topo.set_link_status(NodeRef(2), NodeRef(3), Status::Down)
        .unwrap();
    b.link_down(NodeRef(2), NodeRef(3));
    rounds(&mut b, &topo, &mut now, 8);
    let out = b.route(&topo, &app(&b, NodeRef(0), NodeRef(5)));
    assert!(
        matches!(
            out,
            RouteOutcome::Dropped {
                reason: DropReason::NoRoute,
                ..
            }
        ),
        "{out:?}"
    );
    assert!(b
        .route(&topo, &app(&b, NodeRef(0), NodeRef(2)))
        .is_delivered());
}

#[test]
fn ttl_and_undetected_failures_drop() {
    let mut topo = line(5);
    let mut b = backbone(&topo, 6);
    let mut now = 0;
    rounds(&mut b, &topo, &mut now, 6);
    let mut msg = app(&b, NodeRef(0), NodeRef(4));
    msg.ttl = 2;
    assert!(matches!(
        b.route(&topo, &msg),
        RouteOutcome::Dropped {
            reason: DropReason::TtlExceeded,
            ..
        }
    ));
    // the link fails but the control plane has not been told yet
    topo.set_link_status(NodeRef(2), NodeRef(3), Status::Down)
        .unwrap();
    let out = b.route(&topo, &app(&b, NodeRef(0), NodeRef(4)));
    assert_eq!(
        out,
        RouteOutcome::Dropped {
            reason: DropReason::NodeDownMidPath,
            path: vec![NodeRef(1), NodeRef(2)]
        }
    );
}

#[test]
fn tables_keep_bucket_discipline_and_live_next_hops() {
    let mut rng = substream(7, "topo");
    let topo = random_connected(&mut rng, 40, 20, 1..=5);
    let mut b = Backbone::new(
        KiraConfig {
            k: 4,
            ..KiraConfig::default()
        },
        &topo,
        substream(7, "kira"),
    );
    let mut now = 0;
    rounds(&mut b, &topo, &mut now, 12);
    b.check_tables(&topo).unwrap();
    let full = b
        .nodes()
        .flat_map(|(_, n)| n.table.buckets().map(|(_, c)| c.len()))
        .filter(|&l| l == 4)
        .count();
    assert!(full > 0, "small k should fill some buckets");
}

#[test]
fn malformed_gossip_is_counted() {
    let topo = line(2);
    let b = backbone(&topo, 8);
    let msgs = b.gossip_messages(&topo, NodeRef(0), 500);
    assert_eq!(msgs.len(), 1);
    let mut payload = msgs[0].1.payload.clone();
    payload.push(0xFF);
    let (entries, bad) = decode_gossip(&payload, 64);
    assert_eq!((entries.len(), bad), (1, 1));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn converges_within_diameter_plus_two(seed in any::<u64>(), n in 2u32..=32, extra in 0usize..16) {
        let mut rng = substream(seed, "topo");
        let topo = random_connected(&mut rng, n, extra, 1..=5);
        let diameter = topo.diameter();
        let mut b = backbone(&topo, seed);
        let mut now = 0;
        let last = rounds(&mut b, &topo, &mut now, diameter + 8);
        prop_assert!(last <= diameter + 2, "last change {last}, diameter {diameter}");
        for s in topo.nodes() {
            for d in topo.nodes() {
                match b.route(&topo, &app(&b, s, d)) {
                    RouteOutcome::Delivered { steps, .. } => prop_assert!(greedy_progress_holds(&steps)),
                    other => prop_assert!(false, "{s}->{d}: {other:?}"),
                }
            }
        }
    }
}

#[test]
fn reconverges_after_node_removal() {
    for seed in 0..10u64 {
        let mut rng = substream(seed, "topo");
        let n = rng.random_range(16..=40);
        let mut topo = random_connected(&mut rng, n, n as usize / 2, 1..=5);
        let mut b = backbone(&topo, seed);
        let mut now = 0;
        rounds(&mut b, &topo, &mut now, topo.diameter() + 2);
        let victim = topo
            .nodes()
            .find(|&v| !topo.is_articulation_point(v))
            .unwrap();
        now += 1;
        topo.set_node_status(victim, Status::Down).unwrap();
        b.node_down(&topo, victim);
        let diameter = topo.diameter();
        let last = rounds(&mut b, &topo, &mut now, diameter + 8);
        assert!(
            last <= diameter + 2,
            "seed {seed}: last change {last}, diameter {diameter}"
        );
        assert_eq!(connected_components(&topo).len(), 1);
        for s in topo.live_nodes() {
            for d in topo.live_nodes() {
                assert!(b.route(&topo, &app(&b, s, d)).is_delivered());
            }
        }
    }
}

#[test]
fn rebooted_node_gets_new_identity() {
    let mut topo = line(3);
    let mut b = backbone(&topo, 9);
    let before = b.id_of(NodeRef(1)).unwrap();
    topo.set_node_status(NodeRef(1), Status::Down).unwrap();
    b.node_down(&topo, NodeRef(1));
    assert_eq!(b.id_of(NodeRef(1)), None);
    topo.set_node_status(NodeRef(1), Status::Up).unwrap();
    let after = b.node_up(&topo, NodeRef(1), 10);
    assert_ne!(before, after);
    // hellos on reboot install the neighbors right away
    assert_eq!(b.node(NodeRef(1)).unwrap().table.len(), 2);
}

const SM_KEY: &str = "dynamic-spectrum-manager";

fn sm_record(b: &Backbone, host: NodeRef, version: u64, ttl_s: u32) -> DhtRecord {
    DhtRecord {
        key: SM_KEY.into(),
        value: DhtValue {
            node: b.id_of(host).unwrap(),
            port: 1,
        },
        ttl_s,
        version,
    }
}

#[test]
fn put_then_get_from_every_node() {
    let mut rng = substream(12, "topo");
    let topo = random_connected(&mut rng, 24, 12, 1..=5);
    let mut b = backbone(&topo, 12);
    let mut now = 0;
    rounds(&mut b, &topo, &mut now, topo.diameter() + 2);
    let rec = sm_record(&b, NodeRef(0), 1, 30);
    let replicas = b.dht_put(&topo, NodeRef(0), &rec, now).unwrap();
    assert_eq!(replicas.len(), 2);
    // replicas are the two ids closest to the key
    let key = NodeId::for_key(SM_KEY.as_bytes());
    let mut ids: Vec<NodeId> = b.nodes().map(|(_, n)| n.id).collect();
    ids.sort_by_key(|id| xor_distance(id, &key));
    assert_eq!(replicas, ids[..2].to_vec());
    for n in topo.nodes() {
        assert_eq!(b.dht_get(&topo, n, SM_KEY, now).unwrap(), rec);
    }
    assert_eq!(
        b.dht_get(&topo, NodeRef(3), "never-put", now),
        Err(DhtError::NotFound)
    );
}

#[test]
fn isolated_origin_cannot_put() {
    let mut topo = line(2);
    topo.add_node(NodeRef(2));
    let mut b = backbone(&topo, 13);
    let rec = sm_record(&b, NodeRef(2), 1, 30);
    assert_eq!(
        b.dht_put(&topo, NodeRef(2), &rec, 0),
        Err(DhtError::PutFailed)
    );
}

#[test]
fn second_replica_answers_after_first_fails() {
    // pin ids so that n4 and n2 are the two closest to the key
    let key = NodeId::for_key(SM_KEY.as_bytes());
    let near = |flip_bit: usize| {
        let mut id = key;
        id.0[ID_BYTES - 1 - flip_bit / 8] ^= 1 << (flip_bit % 8);
        id
    };
    let mut topo = TopologyGraph::new();
    for i in 0..6 {
        topo.add_node(NodeRef(i));
    }
    for (a, c) in [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (1, 4)] {
        topo.add_link(NodeRef(a), NodeRef(c), 1).unwrap();
    }
    let ids = BTreeMap::from([(NodeRef(4), near(0)), (NodeRef(2), near(1))]);
    let mut b = Backbone::with_ids(KiraConfig::default(), &topo, substream(14, "kira"), &ids);
    let mut now = 0;
    rounds(&mut b, &topo, &mut now, 6);
    let rec = sm_record(&b, NodeRef(0), 1, 30);
    assert_eq!(
        b.dht_put(&topo, NodeRef(0), &rec, now).unwrap(),
        vec![near(0), near(1)]
    );

    topo.set_node_status(NodeRef(4), Status::Down).unwrap();
    b.node_down(&topo, NodeRef(4));
    for n in topo.live_nodes() {
        assert_eq!(
            b.dht_get(&topo, n, SM_KEY, now + 1).unwrap().value,
            rec.value,
            "from {n}"
        );
    }
}

#[test]
fn records_expire_without_republish() {
    let topo = line(4);
    let mut b = backbone(&topo, 15);
    let mut now = 0;
    rounds(&mut b, &topo, &mut now, 4);
    let rec = sm_record(&b, NodeRef(0), 1, 30);
    let put_at = now;
    b.dht_put(&topo, NodeRef(0), &rec, put_at).unwrap();
    // maintenance without ownership never extends the lifetime
    while now < put_at + 31_000 {
        now += 500;
        b.gossip_round(&topo, now);
        b.republish_tick(&topo, now);
    }
    assert_eq!(
        b.dht_get(&topo, NodeRef(3), SM_KEY, put_at + 31_000),
        Err(DhtError::NotFound)
    );
}

#[test]
fn republished_records_stay_resolvable() {
    let topo = line(5);
    let mut b = backbone(&topo, 16);
    let mut now = 0;
    rounds(&mut b, &topo, &mut now, 5);
    let rec = sm_record(&b, NodeRef(0), 1, 30);
    b.publish(&topo, NodeRef(0), rec.clone(), now).unwrap();
    while now < 120_000 {
        now += 500;
        b.gossip_round(&topo, now);
        b.republish_tick(&topo, now);
    }
    for n in topo.nodes() {
        assert_eq!(b.dht_get(&topo, n, SM_KEY, now).unwrap(), rec);
    }
}

#[test]
fn version_bump_replaces_old_address() {
    let mut topo = line(5);
    let mut b = backbone(&topo, 17);
    let mut now = 0;
    rounds(&mut b, &topo, &mut now, 5);
    b.publish(&topo, NodeRef(0), sm_record(&b, NodeRef(0), 1, 30), now)
        .unwrap();
    // the publisher reboots with a new identity and publishes again
    topo.set_node_status(NodeRef(0), Status::Down).unwrap();
    b.node_down(&topo, NodeRef(0));
    topo.set_node_status(NodeRef(0), Status::Up).unwrap();
    b.node_up(&topo, NodeRef(0), now + 1);
    rounds(&mut b, &topo, &mut now, 6);
    let fresh = sm_record(&b, NodeRef(0), 2, 30);
    b.publish(&topo, NodeRef(0), fresh.clone(), now).unwrap();
    for _ in 0..4 {
        now += 500;
        b.gossip_round(&topo, now);
        b.republish_tick(&topo, now);
    }
    for n in topo.nodes() {
        assert_eq!(b.dht_get(&topo, n, SM_KEY, now).unwrap(), fresh, "from {n}");
    }
}

#[test]
fn early_puts_migrate_toward_the_key() {
    // a put made before convergence lands off-target and is handed on
    let mut rng = substream(18, "topo");
    let topo = random_connected(&mut rng, 30, 15, 1..=5);
    let mut b = backbone(&topo, 18);
    let mut now = 500;
    b.gossip_round(&topo, now);
    let rec = sm_record(&b, NodeRef(0), 1, 30);
    b.dht_put(&topo, NodeRef(0), &rec, now).unwrap();
    for _ in 0..(topo.diameter() + 4) {
        now += 500;
        b.gossip_round(&topo, now);
        b.republish_tick(&topo, now);
    }
    for n in topo.nodes() {
        assert_eq!(b.dht_get(&topo, n, SM_KEY, now).unwrap(), rec);
    }
}
