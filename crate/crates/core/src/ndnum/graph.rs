use super::ops::{self, check_dropout_p, dense_backward_into, DropoutMode};
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::rng::Stream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Input,
    Dense {
        x: NodeId,
        w: ParamId,
        b: Option<ParamId>,
    },
    Relu(NodeId),
    Embed {
        table: ParamId,
        ids: Vec<usize>,
    },
    Concat(Vec<NodeId>),
    /// `None` mask means identity.
    Dropout {
        x: NodeId,
        mask: Option<Vec<f64>>,
    },
    Add(NodeId, NodeId),
    SoftmaxXent {
        logits: NodeId,
        labels: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    /// Whether any parameter lies upstream of this node.
    tracks: bool,
}

/// Define-by-run tape. Nodes are appended in execution order, so the node
/// list is already topologically sorted.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor, tracks: bool) -> NodeId {
        self.nodes.push(Node { op, value, tracks });
        NodeId(self.nodes.len() - 1)
    }

    fn tracks(&self, id: NodeId) -> bool {
        self.nodes[id.0].tracks
    }

    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Input, value, false)
    }

    pub fn dense(
        &mut self,
        store: &ParamStore,
        x: NodeId,
        w: ParamId,
        b: Option<ParamId>,
    ) -> Result<NodeId> {
        let y = ops::dense_forward(
            self.value(x),
            &store.get(w).value,
            b.map(|b| &store.get(b).value),
        )?;
        Ok(self.push(Op::Dense { x, w, b }, y, true))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let y = ops::relu(self.value(x));
        let tracks = self.tracks(x);
        self.push(Op::Relu(x), y, tracks)
    }

    pub fn embed(&mut self, store: &ParamStore, table: ParamId, ids: &[usize]) -> Result<NodeId> {
        let y = ops::embedding_lookup(&store.get(table).value, ids)?;
        Ok(self.push(
            Op::Embed {
                table,
                ids: ids.to_vec(),
            },
            y,
            true,
        ))
    }

    /// Column-wise concatenation of 2-D nodes with equal row counts.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let rows = self.value(parts[0]).dims2().0;
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).dims2().1).collect();
        if let Some(bad) = parts.iter().find(|&&p| self.value(p).dims2().0 != rows) {
            return Err(Error::Shape {
                op: "concat",
                left: self.value(parts[0]).shape().to_vec(),
                right: self.value(*bad).shape().to_vec(),
            });
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let tracks = parts.iter().any(|&p| self.tracks(p));
        let value = Tensor::new(vec![rows, total], out)?;
        Ok(self.push(Op::Concat(parts.to_vec()), value, tracks))
    }

    pub fn dropout(
        &mut self,
        x: NodeId,
        p: f64,
        mode: DropoutMode,
        rng: &mut Stream,
    ) -> Result<NodeId> {
        check_dropout_p(p)?;
        let tracks = self.tracks(x);
        if mode == DropoutMode::Off || p == 0.0 {
            let y = self.value(x).clone();
            return Ok(self.push(Op::Dropout { x, mask: None }, y, tracks));
        }
        let mask = ops::dropout_mask(self.value(x).len(), p, rng);
        self.dropout_with_mask(x, mask)
    }

    /// Dropout with caller-supplied multipliers (one per element).
    pub fn dropout_with_mask(&mut self, x: NodeId, mask: Vec<f64>) -> Result<NodeId> {
        if mask.len() != self.value(x).len() {
            return Err(Error::Shape {
                op: "dropout mask",
                left: self.value(x).shape().to_vec(),
                right: vec![mask.len()],
            });
        }
        let mut y = self.value(x).clone();
        y.data_mut().iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
        let tracks = self.tracks(x);
        Ok(self.push(Op::Dropout { x, mask: Some(mask) }, y, tracks))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape {
                op: "add",
                left: self.value(a).shape().to_vec(),
                right: self.value(b).shape().to_vec(),
            });
        }
        let mut y = self.value(a).clone();
        y.data_mut()
            .iter_mut()
            .zip(self.value(b).data())
            .for_each(|(v, w)| *v += w);
        let tracks = self.tracks(a) || self.tracks(b);
        Ok(self.push(Op::Add(a, b), y, tracks))
    }

    /// Appends the mean cross-entropy loss; the node value is the `[1]` loss.
    pub fn softmax_xent(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let (loss, _) = ops::softmax_xent(self.value(logits), labels)?;
        let tracks = self.tracks(logits);
        Ok(self.push(
            Op::SoftmaxXent {
                logits,
                labels: labels.to_vec(),
            },
            Tensor::filled(&[1], loss),
            tracks,
        ))
    }

    /// Logits feeding a loss node.
    pub fn logits_of(&self, loss: NodeId) -> Result<&Tensor> {
        match self.nodes.get(loss.0).map(|n| &n.op) {
            Some(Op::SoftmaxXent { logits, .. }) => Ok(self.value(*logits)),
            _ => Err(Error::Usage("not a loss node".into())),
        }
    }

    /// Backpropagates from a loss node, accumulating into parameter gradients.
    pub fn backward(&self, loss: NodeId, store: &mut ParamStore) -> Result<()> {
        match self.nodes.get(loss.0) {
            Some(Node {
                op: Op::SoftmaxXent { .. },
                ..
            }) => self.backward_from(loss, Tensor::filled(&[1], 1.0), store),
            Some(_) => Err(Error::Usage("backward target is not a loss node".into())),
            None => Err(Error::Usage("backward called before forward".into())),
        }
    }

    /// Backpropagates an arbitrary upstream gradient from `node`.
    pub fn backward_from(&self, node: NodeId, upstream: Tensor, store: &mut ParamStore) -> Result<()> {
        let target = self
            .nodes
            .get(node.0)
            .ok_or_else(|| Error::Usage("backward called before forward".into()))?;
        if upstream.shape() != target.value.shape() {
            return Err(Error::Shape {
                op: "backward seed",
                left: target.value.shape().to_vec(),
                right: upstream.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..=node.0).map(|_| None).collect();
        grads[node.0] = Some(upstream);

        fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
            match slot {
                Some(acc) => acc
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .for_each(|(a, b)| *a += b),
                None => *slot = Some(g),
            }
        }

        for i in (0..=node.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let n = &self.nodes[i];
            if !n.tracks {
                continue;
            }
            match &n.op {
                Op::Input => {}
                Op::Dense { x, w, b } => {
                    let xv = self.value(*x);
                    let want_dx = self.tracks(*x);
                    let mut dx = want_dx.then(|| Tensor::zeros(xv.shape()));
                    let mut db = b.map(|b| std::mem::take(&mut store.get_mut(b).grad));
                    let param = store.get_mut(*w);
                    dense_backward_into(xv, &param.value, &dy, dx.as_mut(), &mut param.grad, db.as_mut());
                    if let (Some(b), Some(db)) = (b, db) {
                        store.get_mut(*b).grad = db;
                    }
                    if let Some(dx) = dx {
                        accumulate(&mut grads[x.0], dx);
                    }
                }
                Op::Relu(x) => {
                    let mut dx = dy;
                    dx.data_mut()
                        .iter_mut()
                        .zip(n.value.data())
                        .for_each(|(g, y)| {
                            if *y <= 0.0 {
                                *g = 0.0
                            }
                        });
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Embed { table, ids } => {
                    let grad = &mut store.get_mut(*table).grad;
                    let dim = grad.dims2().1;
                    let gdata = grad.data_mut();
                    for (r, &id) in ids.iter().enumerate() {
                        let src = &dy.data()[r * dim..(r + 1) * dim];
                        gdata[id * dim..(id + 1) * dim]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(a, b)| *a += b);
                    }
                }
                Op::Concat(parts) => {
                    let (rows, total) = dy.dims2();
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).dims2().1;
                        if self.tracks(p) {
                            let mut part = Vec::with_capacity(rows * w);
                            for r in 0..rows {
                                part.extend_from_slice(
                                    &dy.data()[r * total + offset..r * total + offset + w],
                                );
                            }
                            accumulate(&mut grads[p.0], Tensor::new(vec![rows, w], part)?);
                        }
                        offset += w;
                    }
                }
                Op::Dropout { x, mask } => {
                    let mut dx = dy;
                    if let Some(mask) = mask {
                        dx.data_mut().iter_mut().zip(mask).for_each(|(g, m)| *g *= m);
                    }
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Add(a, b) => {
                    if self.tracks(*b) {
                        accumulate(&mut grads[b.0], dy.clone());
                    }
                    accumulate(&mut grads[a.0], dy);
                }
                Op::SoftmaxXent { logits, labels } => {
                    let scale = dy.data()[0] / labels.len() as f64;
                    let mut d = ops::softmax(self.value(*logits));
                    let k = d.dims2().1;
                    for (r, &l) in labels.iter().enumerate() {
                        d.data_mut()[r * k + l] -= 1.0;
                    }
                    d.data_mut().iter_mut().for_each(|v| *v *= scale);
                    accumulate(&mut grads[logits.0], d);
                }
            }
        }
        Ok(())
    }
}
