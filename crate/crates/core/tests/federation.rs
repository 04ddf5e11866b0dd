// The oracles index explicitly to mirror the scalar formulas.
#![allow(clippy::needless_range_loop)]

mod common;

use common::{config, shards};
use pfedmb::data::LabeledDataset;
use pfedmb::federation::{
    aggregate, client_local_learning, fine_tune, initialize, run_baseline, run_protocol, run_round,
    run_training, AggregationStrategy, BaselineKind, Checkpoint, ClientState, ClientUpdate,
    LocalConfig, Method, ProtocolOutcome,
};
use pfedmb::nn::{AlphaParams, Matrix, MultiBranchDense, Network, Wrt};
use pfedmb::rng::{self, tag};
use rand::seq::SliceRandom;

fn local(epochs: usize, batch: usize, lr_alpha: f64, lr_w: f64) -> LocalConfig {
    LocalConfig {
        epochs,
        batch_size: batch,
        lr_alpha,
        lr_w,
        learn_alpha: true,
    }
}

fn setup(branches: usize, clients: usize) -> (pfedmb::federation::ServerState, Vec<ClientState>) {
    initialize(&[5, 6, 4], branches, false, shards(clients, 3), 21).unwrap()
}

fn same_outcome(a: &ProtocolOutcome, b: &ProtocolOutcome) {
    assert_eq!(a.server.as_ref().map(|s| &s.global), b.server.as_ref().map(|s| &s.global));
    assert_eq!(a.personalized, b.personalized);
    assert_eq!(a.final_accuracies, b.final_accuracies);
    assert_eq!(a.reports.len(), b.reports.len());
    for (x, y) in a.reports.iter().zip(&b.reports) {
        assert_eq!(x.sampled, y.sampled);
        assert_eq!(x.train_losses, y.train_losses);
        assert_eq!(x.test_accuracies, y.test_accuracies);
        assert_eq!(x.alphas, y.alphas);
    }
}

#[test]
fn zero_learning_rates_return_the_received_model() {
    let (server, mut clients) = setup(3, 2);
    clients[0].alpha = AlphaParams::from_logits(vec![vec![0.3, -0.1, 0.5]; 2], false).unwrap();
    let before = clients[0].alpha.clone();
    let up = client_local_learning(&mut clients[0], &server.global, &local(3, 4, 0.0, 0.0), 0).unwrap();
    assert_eq!(up.params, server.global);
    assert_eq!(clients[0].alpha, before);
    assert_eq!(up.alpha, before.per_layer(2));
}

#[test]
fn single_branch_alpha_phase_is_a_no_op() {
    let (server, mut clients) = setup(1, 2);
    let cfg = local(3, 5, 0.7, 0.1);
    let up = client_local_learning(&mut clients[1], &server.global, &cfg, 4).unwrap();

    // Plain mini-batch SGD with the weight-phase batch order.
    let c = &clients[1];
    let mut net = server.global.clone();
    let alpha = AlphaParams::uniform(2, 1, false);
    let mut r = rng::stream(c.rng_seed, &[tag::WEIGHT_PHASE, 4]);
    let mut order: Vec<usize> = (0..c.train.len()).collect();
    for _ in 0..3 {
        order.shuffle(&mut r);
        for batch in order.chunks(5) {
            let x = c.train.features().select_rows(batch);
            let y: Vec<usize> = batch.iter().map(|&i| c.train.labels()[i]).collect();
            let (_, g) = net.loss_and_grads(&alpha, &x, &y, Wrt::Weights).unwrap();
            net.sgd_step(&g, 0.1).unwrap();
        }
    }
    assert_eq!(up.params, net);
    assert_eq!(c.alpha, alpha);
}

/// Independent scalar-loop evaluation of one alpha step followed by one
/// weight step on a single linear multi-branch layer, full batch.
struct Oracle {
    w: Vec<Vec<Vec<f64>>>, // [branch][out][in]
    b: Vec<Vec<f64>>,      // [branch][out]
    rho: Vec<f64>,
}

impl Oracle {
    fn alpha(&self) -> Vec<f64> {
        let m = self.rho.iter().cloned().fold(f64::MIN, f64::max);
        let e: Vec<f64> = self.rho.iter().map(|r| (r - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|v| v / s).collect()
    }

    /// dL/dz per sample and the per-branch outputs.
    fn dz(&self, xs: &[Vec<f64>], ys: &[usize]) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
        let a = self.alpha();
        let n = xs.len() as f64;
        let mut dz = Vec::new();
        let mut branch_out = Vec::new();
        for (x, &y) in xs.iter().zip(ys) {
            let outs: Vec<Vec<f64>> = (0..a.len())
                .map(|bi| {
                    (0..self.b[bi].len())
                        .map(|o| self.b[bi][o] + x.iter().zip(&self.w[bi][o]).map(|(p, q)| p * q).sum::<f64>())
                        .collect()
                })
                .collect();
            let z: Vec<f64> = (0..outs[0].len())
                .map(|o| (0..a.len()).map(|bi| a[bi] * outs[bi][o]).sum())
                .collect();
            let m = z.iter().cloned().fold(f64::MIN, f64::max);
            let s: f64 = z.iter().map(|v| (v - m).exp()).sum();
            dz.push(
                z.iter()
                    .enumerate()
                    .map(|(o, v)| ((v - m).exp() / s - if o == y { 1.0 } else { 0.0 }) / n)
                    .collect(),
            );
            branch_out.push(outs);
        }
        (dz, branch_out)
    }

    fn alpha_step(&mut self, xs: &[Vec<f64>], ys: &[usize], lr: f64) {
        let a = self.alpha();
        let (dz, outs) = self.dz(xs, ys);
        let da: Vec<f64> = (0..a.len())
            .map(|bi| {
                dz.iter()
                    .zip(&outs)
                    .map(|(d, o)| d.iter().zip(&o[bi]).map(|(p, q)| p * q).sum::<f64>())
                    .sum()
            })
            .collect();
        let inner: f64 = a.iter().zip(&da).map(|(p, q)| p * q).sum();
        for bi in 0..a.len() {
            self.rho[bi] -= lr * a[bi] * (da[bi] - inner);
        }
    }

    fn weight_step(&mut self, xs: &[Vec<f64>], ys: &[usize], lr: f64) {
        let a = self.alpha();
        let (dz, _) = self.dz(xs, ys);
        for bi in 0..a.len() {
            for o in 0..self.b[bi].len() {
                let gb: f64 = dz.iter().map(|d| d[o]).sum();
                for j in 0..xs[0].len() {
                    let gw: f64 = dz.iter().zip(xs).map(|(d, x)| d[o] * x[j]).sum();
                    self.w[bi][o][j] -= lr * a[bi] * gw;
                }
                self.b[bi][o] -= lr * a[bi] * gb;
            }
        }
    }
}

#[test]
fn one_batch_one_epoch_matches_hand_stepped_oracle() {
    let xs = vec![vec![0.5, -1.0], vec![1.5, 0.25], vec![-0.75, 0.8]];
    let ys = vec![0, 1, 1];
    let w = vec![
        vec![vec![0.2, -0.4], vec![0.1, 0.3]],
        vec![vec![-0.5, 0.6], vec![0.7, -0.2]],
    ];
    let b = vec![vec![0.05, -0.1], vec![0.0, 0.2]];
    let rho = vec![0.3, -0.2];

    let layer = MultiBranchDense::new(
        w.iter()
            .map(|m| Matrix::from_rows(m).unwrap())
            .collect(),
        b.clone(),
    )
    .unwrap();
    let global = Network::new(vec![layer]).unwrap();
    let train = LabeledDataset::new(Matrix::from_rows(&xs).unwrap(), ys.clone(), 2).unwrap();
    let mut client = ClientState::new(
        0,
        train.clone(),
        train,
        AlphaParams::from_logits(vec![rho.clone()], false).unwrap(),
        5,
    );
    let up = client_local_learning(&mut client, &global, &local(1, 3, 0.4, 0.3), 0).unwrap();

    let mut oracle = Oracle { w, b, rho };
    oracle.alpha_step(&xs, &ys, 0.4);
    oracle.weight_step(&xs, &ys, 0.3);

    for (got, want) in client.alpha.logits()[0].iter().zip(&oracle.rho) {
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
    let l = &up.params.layers()[0];
    for bi in 0..2 {
        for o in 0..2 {
            for j in 0..2 {
                let got = l.branch_weights()[bi].get(o, j);
                assert!((got - oracle.w[bi][o][j]).abs() < 1e-12);
            }
            assert!((l.branch_biases()[bi][o] - oracle.b[bi][o]).abs() < 1e-12);
        }
    }
}

#[test]
fn three_client_aggregation_matches_direct_sum() {
    let mk = |seed: u64| {
        let mut r = rng::stream(seed, &[1]);
        Network::he_uniform(&[2, 2], 2, &mut r).unwrap()
    };
    let ns = [7usize, 3, 12];
    let alphas = [[0.2, 0.8], [0.9, 0.1], [0.5, 0.5]];
    let ups: Vec<ClientUpdate> = (0..3)
        .map(|i| ClientUpdate {
            client_id: i,
            num_samples: ns[i],
            params: mk(i as u64),
            alpha: vec![alphas[i].to_vec()],
            train_loss: 0.0,
        })
        .collect();
    let prev = Network::zeros(&[2, 2], 2).unwrap();
    let g = aggregate(&ups, AggregationStrategy::AlphaWeighted, &prev).unwrap();
    for b in 0..2 {
        let denom: f64 = (0..3).map(|i| ns[i] as f64 * alphas[i][b]).sum();
        for o in 0..2 {
            for j in 0..2 {
                let want: f64 = (0..3)
                    .map(|i| ns[i] as f64 * alphas[i][b] * ups[i].params.layers()[0].branch_weights()[b].get(o, j))
                    .sum::<f64>()
                    / denom;
                let got = g.layers()[0].branch_weights()[b].get(o, j);
                assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
            }
        }
    }
}

#[test]
fn zero_rates_leave_global_unchanged_after_a_round() {
    let (mut server, mut clients) = setup(2, 3);
    let before = server.global.clone();
    let cfg = pfedmb::federation::RoundConfig {
        clients_per_round: 3,
        local: local(1, 4, 0.0, 0.0),
        strategy: AggregationStrategy::AlphaWeighted,
    };
    let rep = run_round(&mut server, &mut clients, &cfg).unwrap();
    assert_eq!(rep.round, 0);
    assert_eq!(server.round, 1);
    for (a, b) in server.global.layers().iter().zip(before.layers()) {
        for (x, y) in a.branch_weights().iter().zip(b.branch_weights()) {
            for (p, q) in x.as_slice().iter().zip(y.as_slice()) {
                assert!((p - q).abs() <= 1e-15 * q.abs().max(1.0));
            }
        }
    }
}

#[test]
fn zero_rounds_returns_initial_state() {
    let (mut server, mut clients) = setup(2, 2);
    let before = server.clone();
    let cfg = config(Method::Pfedmb, 2, 0, 2).round_config();
    assert!(run_training(&mut server, &mut clients, &cfg, 0).unwrap().is_empty());
    assert_eq!(server, before);
}

#[test]
fn replay_is_bit_identical() {
    let cfg = config(Method::Pfedmb, 3, 3, 4);
    let a = run_protocol(&cfg, shards(4, 8)).unwrap();
    let b = run_protocol(&cfg, shards(4, 8)).unwrap();
    same_outcome(&a, &b);
}

#[test]
fn single_branch_protocol_equals_fedavg() {
    let cfg = config(Method::Pfedmb, 1, 4, 4);
    let multi = run_protocol(&cfg, shards(4, 2)).unwrap();
    let fedavg = run_baseline(BaselineKind::Fedavg, &cfg, shards(4, 2)).unwrap();
    same_outcome(&multi, &fedavg);
}

#[test]
fn one_client_fedavg_equals_local_training() {
    let cfg = config(Method::Fedavg, 1, 3, 1);
    let fed = run_protocol(&cfg, shards(1, 4)).unwrap();
    let solo = run_protocol(&config(Method::Local, 1, 3, 1), shards(1, 4)).unwrap();
    assert_eq!(fed.personalized, solo.personalized);
    assert_eq!(fed.final_accuracies, solo.final_accuracies);
    for (f, s) in fed.reports.iter().zip(&solo.reports) {
        assert_eq!(f.train_losses, s.train_losses);
        assert_eq!(f.test_accuracies, s.test_accuracies);
    }
}

#[test]
fn local_only_clients_are_isolated() {
    let base = shards(3, 6);
    let mut altered = base.clone();
    let keep: Vec<usize> = (0..altered[2].0.len() / 2).collect();
    altered[2].0 = altered[2].0.subset(&keep).unwrap();
    let cfg = config(Method::Local, 1, 2, 3);
    let a = run_protocol(&cfg, base).unwrap();
    let b = run_protocol(&cfg, altered).unwrap();
    assert_eq!(a.personalized[0], b.personalized[0]);
    assert_eq!(a.personalized[1], b.personalized[1]);
    assert_ne!(a.personalized[2], b.personalized[2]);
}

#[test]
fn unsampled_clients_keep_their_mixing_weights() {
    let (mut server, mut clients) = setup(3, 5);
    let cfg = pfedmb::federation::RoundConfig {
        clients_per_round: 2,
        local: local(1, 8, 0.5, 0.1),
        strategy: AggregationStrategy::AlphaWeighted,
    };
    for _ in 0..3 {
        let before: Vec<AlphaParams> = clients.iter().map(|c| c.alpha.clone()).collect();
        let rep = run_round(&mut server, &mut clients, &cfg).unwrap();
        assert_eq!(rep.sampled.len(), 2);
        for (i, c) in clients.iter().enumerate() {
            if rep.sampled.contains(&i) {
                assert_ne!(c.alpha, before[i]);
            } else {
                assert_eq!(c.alpha, before[i]);
            }
        }
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let cfg = config(Method::Pfedmb, 3, 3, 4);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_protocol(&cfg, shards(4, 9)).unwrap())
    };
    same_outcome(&run(1), &run(4));
}

#[test]
fn zero_rate_fine_tune_keeps_the_model() {
    let (server, clients) = setup(2, 2);
    let m = fine_tune(&clients[0], &server.global, &local(4, 4, 0.0, 0.0)).unwrap();
    assert_eq!(m.params, server.global);
    assert_eq!(m.alpha, clients[0].alpha);
}

#[test]
fn fine_tuning_does_not_lower_train_accuracy_on_separable_data() {
    let xs: Vec<Vec<f64>> = (0..20)
        .map(|i| {
            let s = if i % 2 == 0 { 1.0 } else { -1.0 };
            vec![s * (1.0 + 0.05 * i as f64), 0.3 * (i as f64 / 20.0 - 0.5)]
        })
        .collect();
    let ys: Vec<usize> = (0..20).map(|i| i % 2).collect();
    let shard = LabeledDataset::new(Matrix::from_rows(&xs).unwrap(), ys, 2).unwrap();
    let global = Network::zeros(&[2, 2], 1).unwrap();
    let client = ClientState::new(0, shard.clone(), shard.clone(), AlphaParams::uniform(1, 1, false), 1);
    let acc = |net: &Network, a: &AlphaParams| pfedmb::metrics::evaluate_client(net, a, &shard).unwrap();
    let before = acc(&global, &client.alpha);
    let m = fine_tune(&client, &global, &local(5, 4, 0.1, 0.1)).unwrap();
    let after = acc(&m.params, &m.alpha);
    assert!(after >= before, "{after} < {before}");
    assert_eq!(after, 1.0);
}

#[test]
fn checkpoint_resume_is_bit_exact() {
    let cfg = config(Method::Pfedmb, 3, 0, 3);
    let rc = pfedmb::federation::RoundConfig {
        clients_per_round: 2,
        ..cfg.round_config()
    };
    let (mut server, mut clients) = initialize(&[5, 6, 4], 3, false, shards(4, 5), 13).unwrap();
    let mut straight = (server.clone(), clients.clone());
    run_training(&mut straight.0, &mut straight.1, &rc, 4).unwrap();

    run_training(&mut server, &mut clients, &rc, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    Checkpoint::capture(&server, &clients).save(&path).unwrap();

    let (_, mut fresh) = initialize(&[5, 6, 4], 3, false, shards(4, 5), 13).unwrap();
    let mut resumed = Checkpoint::load(&path).unwrap().restore(&mut fresh).unwrap();
    assert_eq!(resumed, server);
    run_training(&mut resumed, &mut fresh, &rc, 2).unwrap();
    assert_eq!(resumed, straight.0);
    for (a, b) in fresh.iter().zip(&straight.1) {
        assert_eq!(a.alpha, b.alpha);
    }
}

#[test]
fn checkpoint_rejects_wrong_client_count() {
    let (server, clients) = setup(2, 3);
    let ck = Checkpoint::capture(&server, &clients);
    let (_, mut other) = setup(2, 2);
    assert!(ck.restore(&mut other).is_err());
}

#[test]
fn baselines_reject_multiple_branches() {
    let err = run_protocol(&config(Method::Fedavg, 2, 1, 2), shards(2, 1)).unwrap_err();
    assert!(err.to_string().contains("branches=2"), "{err}");
}
