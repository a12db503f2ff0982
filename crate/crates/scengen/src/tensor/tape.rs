//! The recording tape: eager op registration and one reverse pass.

use super::{Element, Tensor};
use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

/// Gradient contributions returned by a node's backward closure:
/// `(parent node id, gradient w.r.t. that parent)`.
pub(crate) type BackwardFn<E> = Box<dyn Fn(&Tensor<E>) -> Vec<(usize, Tensor<E>)>>;

struct Node<E: Element> {
    value: Tensor<E>,
    needs_grad: bool,
    backward: Option<BackwardFn<E>>,
}

struct TapeInner<E: Element> {
    nodes: Vec<Node<E>>,
    /// Named leaves in registration order; repeated registration of a name
    /// returns the existing node so gradients accumulate in one place.
    leaf_order: Vec<(String, usize)>,
    leaf_index: HashMap<String, usize>,
}

/// A single-use computation graph. Ops recorded through [`Var`] methods
/// append nodes; [`Tape::backward`] runs one reverse sweep.
pub struct Tape<E: Element = f64> {
    inner: Rc<RefCell<TapeInner<E>>>,
}

impl<E: Element> Clone for Tape<E> {
    fn clone(&self) -> Self {
        Self { inner: Rc::clone(&self.inner) }
    }
}

impl<E: Element> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Tape<E> {
    pub fn new() -> Self {
        Self {
            inner: Rc::new(RefCell::new(TapeInner {
                nodes: Vec::new(),
                leaf_order: Vec::new(),
                leaf_index: HashMap::new(),
            })),
        }
    }

    /// A value that does not require gradients.
    pub fn constant(&self, value: Tensor<E>) -> Var<E> {
        self.push(value, false, None)
    }

    /// A named trainable leaf. Registering the same name twice returns the
    /// original node (so shared parameters accumulate gradients correctly).
    pub fn leaf(&self, name: &str, value: &Tensor<E>) -> Var<E> {
        if let Some(&id) = self.inner.borrow().leaf_index.get(name) {
            return Var { tape: self.clone(), id };
        }
        let var = self.push(value.clone(), true, None);
        let mut inner = self.inner.borrow_mut();
        inner.leaf_order.push((name.to_string(), var.id));
        inner.leaf_index.insert(name.to_string(), var.id);
        var
    }

    pub(crate) fn push(
        &self,
        value: Tensor<E>,
        needs_grad: bool,
        backward: Option<BackwardFn<E>>,
    ) -> Var<E> {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node { value, needs_grad, backward });
        Var { tape: self.clone(), id }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn same_as(&self, other: &Tape<E>) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    pub(crate) fn value_of(&self, id: usize) -> Tensor<E> {
        self.inner.borrow().nodes[id].value.clone()
    }

    pub(crate) fn needs_grad_of(&self, id: usize) -> bool {
        self.inner.borrow().nodes[id].needs_grad
    }

    /// Reverse sweep from a scalar loss. Returns the gradients of all named
    /// leaves in registration order.
    pub fn backward(&self, loss: &Var<E>) -> GradMap<E> {
        assert!(Rc::ptr_eq(&self.inner, &loss.tape.inner), "loss recorded on a different tape");
        let inner = self.inner.borrow();
        assert_eq!(
            inner.nodes[loss.id].value.numel(),
            1,
            "backward needs a scalar loss, got shape {:?}",
            inner.nodes[loss.id].value.shape()
        );
        let mut grads: Vec<Option<Tensor<E>>> = vec![None; inner.nodes.len()];
        grads[loss.id] = Some(Tensor::filled(inner.nodes[loss.id].value.shape(), E::one()));

        for id in (0..=loss.id).rev() {
            let node = &inner.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(grad) = grads[id].clone() else { continue };
            let Some(backward) = node.backward.as_ref() else { continue };
            for (parent, contribution) in backward(&grad) {
                if !inner.nodes[parent].needs_grad {
                    continue;
                }
                match &mut grads[parent] {
                    slot @ None => *slot = Some(contribution),
                    Some(existing) => accumulate(existing, &contribution),
                }
            }
        }

        let entries = inner
            .leaf_order
            .iter()
            .map(|(name, id)| {
                let g = grads[*id]
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(inner.nodes[*id].value.shape()));
                (name.clone(), g)
            })
            .collect();
        GradMap { entries }
    }
}

fn accumulate<E: Element>(acc: &mut Tensor<E>, add: &Tensor<E>) {
    assert_eq!(acc.shape(), add.shape(), "gradient accumulation shape mismatch");
    let (shape, mut data) = acc.clone().into_parts();
    {
        let dst = Tensor::data_mut(&mut data);
        for (d, s) in dst.iter_mut().zip(add.data()) {
            *d += *s;
        }
    }
    *acc = Tensor::from_parts(shape, data);
}

/// Named leaf gradients in registration order.
#[derive(Debug, Clone)]
pub struct GradMap<E: Element = f64> {
    entries: Vec<(String, Tensor<E>)>,
}

impl<E: Element> GradMap<E> {
    pub fn empty() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<E>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, g)| g)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<E>)> {
        self.entries.iter().map(|(n, g)| (n.as_str(), g))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Elementwise sum with another gradient map (missing names are added).
    pub fn merge(&mut self, other: &GradMap<E>) {
        for (name, grad) in &other.entries {
            match self.entries.iter_mut().find(|(n, _)| n == name) {
                Some((_, acc)) => accumulate(acc, grad),
                None => self.entries.push((name.clone(), grad.clone())),
            }
        }
    }

    /// Scale all gradients in place (for loss averaging).
    pub fn scale(&mut self, k: f64) {
        for (_, g) in &mut self.entries {
            *g = g.map(|v| v * E::from_f64(k));
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|(_, g)| g.data().iter())
            .map(|v| v.as_f64().abs())
            .fold(0.0, f64::max)
    }
}

/// A tensor-valued node on a [`Tape`].
pub struct Var<E: Element = f64> {
    pub(crate) tape: Tape<E>,
    pub(crate) id: usize,
}

impl<E: Element> Clone for Var<E> {
    fn clone(&self) -> Self {
        Self { tape: self.tape.clone(), id: self.id }
    }
}

impl<E: Element> Var<E> {
    pub fn value(&self) -> Tensor<E> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn needs_grad(&self) -> bool {
        self.tape.needs_grad_of(self.id)
    }

    /// The same value as a fresh constant: gradients stop here.
    pub fn detach(&self) -> Var<E> {
        self.tape.constant(self.value())
    }

    pub fn tape(&self) -> &Tape<E> {
        &self.tape
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaf_dedupes_by_name() {
        let tape = Tape::<f64>::new();
        let w = Tensor::from_f64s(&[2], &[1.0, 2.0]);
        let a = tape.leaf("w", &w);
        let b = tape.leaf("w", &w);
        assert_eq!(a.id, b.id);
        assert_eq!(tape.len(), 1);
    }

    #[test]
    fn shared_leaf_accumulates_gradient() {
        // loss = sum(w) + sum(w) => dw = 2 everywhere.
        let tape = Tape::<f64>::new();
        let w = Tensor::from_f64s(&[3], &[1.0, 2.0, 3.0]);
        let a = tape.leaf("w", &w).sum();
        let b = tape.leaf("w", &w).sum();
        let loss = a.add(&b);
        let grads = tape.backward(&loss);
        assert_eq!(grads.get("w").unwrap().to_f64_vec(), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let tape = Tape::<f64>::new();
        let used = tape.leaf("used", &Tensor::from_f64s(&[2], &[1.0, 2.0]));
        let _unused = tape.leaf("unused", &Tensor::from_f64s(&[2], &[5.0, 6.0]));
        let loss = used.sum();
        let grads = tape.backward(&loss);
        assert_eq!(grads.get("unused").unwrap().to_f64_vec(), vec![0.0, 0.0]);
    }

    #[test]
    fn gradmap_merge_and_scale() {
        let tape = Tape::<f64>::new();
        let w = tape.leaf("w", &Tensor::from_f64s(&[2], &[1.0, 1.0]));
        let loss = w.sum();
        let mut g1 = tape.backward(&loss);
        let g2 = g1.clone();
        g1.merge(&g2);
        g1.scale(0.5);
        assert_eq!(g1.get("w").unwrap().to_f64_vec(), vec![1.0, 1.0]);
    }
}
