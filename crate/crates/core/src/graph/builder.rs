//! Recursive construction of B0 and K-branch RBDN graphs.
//!
//! Trunk: `conv1 → pool1 → [concat with branch 1] → D transform convs → unpool1 → deconv1`.
//! Branch k taps the pool output of its parent, halves the scale with its own pool, optionally
//! merges branch k+1 at that pool, and returns to the parent scale through unpool + deconv
//! (or bilinear upsampling in the ablation). Every conv and deconv is followed by batch norm
//! and ReLU, and so has no bias, except the output deconv.

use crate::layers::{BatchNormParams, ConvParams};
use crate::tensor::Real;

use super::{GraphError, NetworkGraph, NodeId, Op, RbdnConfig, Variant};

fn conv_block<T: Real>(
    g: &mut NetworkGraph<T>,
    name: &str,
    input: NodeId,
    in_c: usize,
    out_c: usize,
    k: usize,
) -> NodeId {
    let conv =
        g.push(name, Op::Conv { params: ConvParams::zeros_conv(in_c, out_c, k, k), pad: k / 2, bias: false }, &[input]);
    norm_relu(g, name, conv, out_c)
}

fn norm_relu<T: Real>(g: &mut NetworkGraph<T>, name: &str, input: NodeId, c: usize) -> NodeId {
    let bn = g.push(format!("{name}_bn"), Op::BatchNorm(BatchNormParams::new(c)), &[input]);
    g.push(format!("{name}_relu"), Op::Relu, &[bn])
}

/// Attaches branch `k` of `n` to `tap` (a pool output with `cfg.channels` channels) and returns
/// the node whose output lives on `tap`'s grid.
fn attach_branch<T: Real>(g: &mut NetworkGraph<T>, k: usize, n: usize, tap: NodeId) -> Result<NodeId, GraphError> {
    if k == 0 || k > n {
        return Err(GraphError::BranchOutOfRange { k, n });
    }
    let cfg = g.config().clone();
    let c = cfg.channels;
    let t = cfg.transform_kernel;
    let first = conv_block(g, &format!("convb{k}1"), tap, c, c, t);
    let pool = g.push(format!("poolb{k}"), Op::MaxPool, &[first]);
    let (merged, width) = if k < n {
        let sub = attach_branch(g, k + 1, n, pool)?;
        match cfg.variant {
            Variant::NoConcat => (sub, c),
            _ => (g.push(format!("concatb{k}"), Op::Concat, &[pool, sub]), 2 * c),
        }
    } else {
        (pool, c)
    };
    let second = conv_block(g, &format!("convb{k}2"), merged, width, c, t);
    Ok(match cfg.variant {
        Variant::Bilinear => g.push(format!("upb{k}"), Op::Bilinear, &[second]),
        _ => {
            let unpool = g.push(format!("unpoolb{k}"), Op::Unpool { pool }, &[second]);
            let name = format!("deconvb{k}1");
            let deconv = g.push(
                &name,
                Op::Deconv { params: ConvParams::zeros_deconv(c, c, t, t), pad: t / 2, bias: false },
                &[unpool],
            );
            norm_relu(g, &name, deconv, c)
        }
    })
}

/// Branch `k` of an `n`-branch chain as a standalone graph whose input stands in for the
/// parent's pool output.
pub fn build_branch<T: Real>(k: usize, n: usize, cfg: &RbdnConfig) -> Result<NetworkGraph<T>, GraphError> {
    if k == 0 || k > n {
        return Err(GraphError::BranchOutOfRange { k, n });
    }
    let cfg = RbdnConfig { branches: n, ..cfg.clone() };
    cfg.validate()?;
    let mut g = NetworkGraph::empty(cfg.clone());
    let input = g.push("tap", Op::Input { channels: cfg.channels }, &[]);
    attach_branch(&mut g, k, n, input)?;
    g.validate()?;
    Ok(g)
}

/// The branch-free base network. Fails if `cfg` asks for branches.
pub fn build_b0<T: Real>(cfg: &RbdnConfig) -> Result<NetworkGraph<T>, GraphError> {
    if cfg.branches != 0 {
        return Err(GraphError::InvalidConfig(format!("B0 has no branches, config has {}", cfg.branches)));
    }
    build_rbdn(cfg)
}

/// All weights zero; call [`NetworkGraph::initialize`] before training.
pub fn build_rbdn<T: Real>(cfg: &RbdnConfig) -> Result<NetworkGraph<T>, GraphError> {
    cfg.validate()?;
    let c = cfg.channels;
    let kp = cfg.patch_kernel;
    let mut g = NetworkGraph::empty(cfg.clone());
    let input = g.push("input", Op::Input { channels: cfg.in_channels }, &[]);
    let first = conv_block(&mut g, "conv1", input, cfg.in_channels, c, kp);
    let pool = g.push("pool1", Op::MaxPool, &[first]);
    let (mut x, mut width) = (pool, c);
    if cfg.branches > 0 {
        let branch = attach_branch(&mut g, 1, cfg.branches, pool)?;
        (x, width) = match cfg.variant {
            Variant::NoConcat => (branch, c),
            _ => (g.push("concat1", Op::Concat, &[pool, branch]), 2 * c),
        };
    }
    for i in 1..=cfg.depth {
        x = conv_block(&mut g, &format!("transform{i}"), x, width, c, cfg.transform_kernel);
        width = c;
    }
    let unpool = g.push("unpool1", Op::Unpool { pool }, &[x]);
    g.push(
        "deconv1",
        Op::Deconv { params: ConvParams::zeros_deconv(c, cfg.out_channels, kp, kp), pad: kp / 2, bias: true },
        &[unpool],
    );
    g.validate()?;
    Ok(g)
}

/// Rebuilds a full RBDN as one of the ablated variants, carrying over every parameter that
/// survives. Convs that lose their concat input keep the weights for the branch half.
pub fn ablate<T: Real>(g: &NetworkGraph<T>, variant: Variant) -> Result<NetworkGraph<T>, GraphError> {
    if variant == Variant::Full {
        return Err(GraphError::InvalidConfig("ablation mode must be no-concat or bilinear".into()));
    }
    if g.config().branches == 0 {
        return Err(GraphError::InvalidConfig(format!("ablation '{variant}' needs at least one branch")));
    }
    if g.config().variant != Variant::Full {
        return Err(GraphError::InvalidConfig(format!("graph is already ablated ('{}')", g.config().variant)));
    }
    let cfg = RbdnConfig { variant, ..g.config().clone() };
    let mut out = build_rbdn::<T>(&cfg)?;
    for node in out.nodes_mut() {
        let Some(src) = g.find(&node.name) else { continue };
        match (&mut node.op, &g.node(src).op) {
            (Op::Conv { params: dst, .. }, Op::Conv { params: from, .. })
            | (Op::Deconv { params: dst, .. }, Op::Deconv { params: from, .. }) => {
                dst.bias.clone_from(&from.bias);
                let [o, i, kh, kw] = dst.weight.shape();
                let from_in = from.weight.c();
                if from.weight.shape() == dst.weight.shape() {
                    dst.weight = from.weight.clone();
                } else if from_in == 2 * i {
                    let k = kh * kw;
                    for oc in 0..o {
                        let s = &from.weight.sample(oc)[i * k..2 * i * k];
                        dst.weight.sample_mut(oc).copy_from_slice(s);
                    }
                } else {
                    return Err(GraphError::Structure(format!("cannot transfer weights of '{}'", node.name)));
                }
                debug_assert_eq!(dst.weight.shape(), [o, i, kh, kw]);
            }
            (Op::BatchNorm(dst), Op::BatchNorm(from)) => *dst = from.clone(),
            _ => {}
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NodeKind;
    use crate::layers::Mode;
    use crate::tensor::Tensor;

    fn small(k: usize) -> RbdnConfig {
        RbdnConfig { branches: k, patch_kernel: 3, channels: 2, transform_kernel: 3, depth: 2, ..Default::default() }
    }

    #[test]
    fn b0_layer_sequence() {
        let g = build_b0::<f32>(&RbdnConfig::default()).unwrap();
        assert_eq!(g.count(NodeKind::Conv), 10);
        assert_eq!(g.count(NodeKind::MaxPool), 1);
        assert_eq!(g.count(NodeKind::Unpool), 1);
        assert_eq!(g.count(NodeKind::Deconv), 1);
        assert_eq!(g.count(NodeKind::BatchNorm), 10);
        assert!(build_b0::<f32>(&RbdnConfig::default().with_branches(1)).is_err());
    }

    #[test]
    fn branch_counts_and_names() {
        for k in 0..=4 {
            let g = build_rbdn::<f32>(&small(k)).unwrap();
            assert_eq!(g.count(NodeKind::Concat), k);
            assert_eq!(g.count(NodeKind::MaxPool), k + 1);
            assert_eq!(g.count(NodeKind::Unpool), k + 1);
            assert_eq!(g.min_divisor(), 1 << (k + 1));
        }
        let g = build_rbdn::<f32>(&small(1)).unwrap();
        for name in ["convb11", "convb12", "deconvb11", "poolb1", "unpoolb1", "concat1"] {
            assert!(g.find(name).is_some(), "{name}");
        }
    }

    #[test]
    fn branch_subgraph() {
        let deepest = build_branch::<f32>(3, 3, &small(0)).unwrap();
        assert_eq!(deepest.count(NodeKind::Concat), 0);
        let top = build_branch::<f32>(1, 3, &small(0)).unwrap();
        assert_eq!(top.count(NodeKind::Concat), 2);
        assert_eq!(top.count(NodeKind::Deconv), 3);
        assert!(matches!(build_branch::<f32>(4, 3, &small(0)), Err(GraphError::BranchOutOfRange { .. })));
        assert!(build_branch::<f32>(0, 3, &small(0)).is_err());
    }

    #[test]
    fn ablations() {
        let mut full = build_rbdn::<f64>(&small(2)).unwrap();
        full.initialize(&mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1));
        let nc = ablate(&full, Variant::NoConcat).unwrap();
        assert_eq!(nc.count(NodeKind::Concat), 0);
        for i in 1..nc.nodes().len() {
            assert_eq!(nc.consumers(i - 1), vec![i], "single path at node {i}");
        }
        let bl = ablate(&full, Variant::Bilinear).unwrap();
        assert_eq!(bl.count(NodeKind::Deconv), 1);
        assert_eq!(bl.count(NodeKind::Unpool), 1);
        assert_eq!(bl.switch_links().len(), 1);
        assert!(ablate(&build_rbdn::<f64>(&small(0)).unwrap(), Variant::Bilinear).is_err());
        assert!(ablate(&nc, Variant::Bilinear).is_err());
        for g in [&nc, &bl] {
            let x = Tensor::<f64>::full([1, 1, 20, 12], 0.5);
            let mut g = g.clone();
            assert_eq!(g.forward(&x, Mode::Train, crate::graph::Padding::Reflect).unwrap().shape(), [1, 1, 20, 12]);
        }
    }

    #[test]
    fn narrowed_conv_keeps_branch_half() {
        let mut full = build_rbdn::<f64>(&small(1)).unwrap();
        let mut seed = 0.0;
        for p in full.params_mut() {
            for v in p.iter_mut() {
                seed += 1.0;
                *v = seed;
            }
        }
        let nc = ablate(&full, Variant::NoConcat).unwrap();
        let id = |g: &NetworkGraph<f64>| g.find("transform1").unwrap();
        let (Op::Conv { params: a, .. }, Op::Conv { params: b, .. }) = (&full.node(id(&full)).op, &nc.node(id(&nc)).op)
        else {
            panic!("transform1 is a conv");
        };
        assert_eq!(b.weight[[1, 0, 2, 2]], a.weight[[1, 2, 2, 2]]);
        assert_eq!(b.bias, a.bias);
    }

    #[test]
    fn zero_network_gives_zero() {
        let mut g = build_rbdn::<f64>(&small(1)).unwrap();
        g.mark_stats_tracked();
        let x = Tensor::from_fn([1, 1, 8, 8], |[_, _, y, x]| (y * 8 + x) as f64);
        let y = g.infer(&x, crate::graph::Padding::Disabled).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }
}
