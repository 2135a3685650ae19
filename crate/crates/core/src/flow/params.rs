/// Role of a trainable parameter; weight decay applies to conv weights only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamKind {
    ConvWeight,
    ConvBias,
    Gamma,
}

/// Fixed-order traversal over trainable parameters. The order defines the
/// flat parameter and gradient layout used by training and checkpoints.
pub trait Parameterized {
    fn num_params(&self) -> usize;
    fn visit(&self, f: &mut dyn FnMut(ParamKind, &[f64]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(ParamKind, &mut [f64]));

    fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit(&mut |_, p| out.extend_from_slice(p));
        out
    }

    fn param_kinds(&self) -> Vec<ParamKind> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit(&mut |k, p| out.extend(std::iter::repeat_n(k, p.len())));
        out
    }

    /// Panics if `values.len() != self.num_params()`.
    fn load_flat_params(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.num_params(), "parameter count mismatch");
        let mut off = 0;
        self.visit_mut(&mut |_, p| {
            p.copy_from_slice(&values[off..off + p.len()]);
            off += p.len();
        });
    }
}
