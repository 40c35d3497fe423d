use super::{no_grad, Node, Op, Tensor, Unary};
use std::collections::HashMap;
use std::rc::Rc;

type NodeKey = *const Node;

fn key(t: &Tensor) -> NodeKey {
    Rc::as_ptr(&t.0)
}

fn parents(t: &Tensor) -> Vec<&Tensor> {
    match &t.0.op {
        Op::Leaf => vec![],
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::MatMul(a, b, _, _) => {
            vec![a, b]
        }
        Op::Concat(parts) => parts.iter().collect(),
        Op::Affine(a, _)
        | Op::Unary(a, _)
        | Op::Mask(a, _)
        | Op::Reshape(a)
        | Op::Broadcast(a)
        | Op::SumTo(a)
        | Op::Im2Col(a, _)
        | Op::Col2Im(a, _)
        | Op::Upsample(a)
        | Op::SumPool(a)
        | Op::Slice(a, _)
        | Op::Pad(a, _) => vec![a],
    }
}

/// Nodes reachable from `root` through grad-requiring edges, parents first.
fn topo_order(root: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut visited: HashMap<NodeKey, ()> = HashMap::new();
    let mut stack: Vec<(Tensor, bool)> = vec![(root.clone(), false)];
    while let Some((t, expanded)) = stack.pop() {
        if expanded {
            order.push(t);
            continue;
        }
        if visited.insert(key(&t), ()).is_some() {
            continue;
        }
        stack.push((t.clone(), true));
        for p in parents(&t) {
            if p.requires_grad() && !visited.contains_key(&key(p)) {
                stack.push((p.clone(), false));
            }
        }
    }
    order
}

/// Gradient contributions of `node`'s output gradient `g` to each parent.
fn backward(node: &Tensor, g: &Tensor) -> Vec<(Tensor, Tensor)> {
    match &node.0.op {
        Op::Leaf => vec![],
        Op::Add(a, b) => vec![(a.clone(), g.clone()), (b.clone(), g.clone())],
        Op::Sub(a, b) => vec![(a.clone(), g.clone()), (b.clone(), g.neg())],
        Op::Mul(a, b) => vec![(a.clone(), g.mul(b)), (b.clone(), g.mul(a))],
        Op::Div(a, b) => {
            let ga = g.div(b);
            let gb = g.mul(a).div(&b.mul(b)).neg();
            vec![(a.clone(), ga), (b.clone(), gb)]
        }
        Op::Affine(a, s) => vec![(a.clone(), g.scale(*s))],
        Op::Unary(a, kind) => {
            let ga = match kind {
                Unary::Exp => g.mul(&a.exp()),
                Unary::Log => g.div(a),
                Unary::Sigmoid => {
                    let s = a.sigmoid();
                    g.mul(&s.mul(&s.affine(-1.0, 1.0)))
                }
                Unary::Tanh => {
                    let t = a.tanh();
                    g.mul(&t.square().affine(-1.0, 1.0))
                }
                Unary::Softplus => g.mul(&a.sigmoid()),
                Unary::Sqrt => g.div(&a.sqrt().scale(2.0)),
            };
            vec![(a.clone(), ga)]
        }
        Op::Mask(a, m) => vec![(a.clone(), g.mask(Rc::clone(m)))],
        Op::MatMul(a, b, ta, tb) => {
            let (ta, tb) = (*ta, *tb);
            let ga = if !ta {
                g.matmul_t(b, false, !tb)
            } else {
                b.matmul_t(g, tb, true)
            };
            let gb = if !tb {
                a.matmul_t(g, !ta, false)
            } else {
                g.matmul_t(a, true, ta)
            };
            vec![(a.clone(), ga), (b.clone(), gb)]
        }
        Op::Reshape(a) => vec![(a.clone(), g.reshape(a.shape()))],
        Op::Broadcast(a) => vec![(a.clone(), g.sum_to(a.shape()))],
        Op::SumTo(a) => vec![(a.clone(), g.broadcast_to(a.shape()))],
        Op::Im2Col(a, geom) => vec![(a.clone(), g.col2im(*geom))],
        Op::Col2Im(a, geom) => vec![(a.clone(), g.im2col(geom.kernel))],
        Op::Upsample(a) => vec![(a.clone(), g.sum_pool2())],
        Op::SumPool(a) => vec![(a.clone(), g.upsample2())],
        Op::Concat(parts) => {
            let mut start = 0;
            parts
                .iter()
                .map(|p| {
                    let w = *p.shape().last().unwrap();
                    let gp = g.slice_last(start, w);
                    start += w;
                    (p.clone(), gp)
                })
                .collect()
        }
        Op::Slice(a, start) => {
            let width = *a.shape().last().unwrap();
            vec![(a.clone(), g.pad_last(*start, width))]
        }
        Op::Pad(a, start) => {
            let len = *a.shape().last().unwrap();
            vec![(a.clone(), g.slice_last(*start, len))]
        }
    }
}

/// Gradients of `output` (summed over its elements) with respect to `wrt`.
///
/// With `create_graph` the returned gradients are themselves part of the
/// graph and can be differentiated again. Inputs not reachable from
/// `output` get zero gradients.
pub fn grad(output: &Tensor, wrt: &[&Tensor], create_graph: bool) -> Vec<Tensor> {
    let _guard = if create_graph { None } else { Some(no_grad()) };
    let mut wanted: HashMap<NodeKey, Option<Tensor>> = wrt.iter().map(|t| (key(t), None)).collect();
    if output.requires_grad() {
        let order = topo_order(output);
        let mut grads: HashMap<NodeKey, Tensor> = HashMap::new();
        grads.insert(key(output), Tensor::full(output.shape(), 1.0));
        for node in order.iter().rev() {
            let k = key(node);
            let Some(g) = grads.remove(&k) else { continue };
            if let Some(slot) = wanted.get_mut(&k) {
                *slot = Some(g.clone());
            }
            for (parent, pg) in backward(node, &g) {
                if !parent.requires_grad() {
                    continue;
                }
                let pk = key(&parent);
                let acc = match grads.remove(&pk) {
                    Some(prev) => prev.add(&pg),
                    None => pg,
                };
                grads.insert(pk, acc);
            }
        }
    }
    wrt.iter()
        .map(|t| {
            wanted
                .get_mut(&key(t))
                .and_then(Option::take)
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
        })
        .collect()
}
