use rand::Rng;

use super::{Graph, NumError, ParameterStore, Tensor, Var};

/// Affine map `x·W + b` with parameters `{prefix}.w` and `{prefix}.b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub prefix: String,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(prefix: impl Into<String>, input: usize, output: usize) -> Self {
        Self {
            prefix: prefix.into(),
            input,
            output,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.w", self.prefix)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.b", self.prefix)
    }

    pub fn register(&self, store: &mut ParameterStore, rng: &mut impl Rng) {
        store.insert_xavier(&self.weight_name(), self.input, self.output, rng);
        store.insert(self.bias_name(), Tensor::zeros(1, self.output));
    }

    pub fn forward(&self, g: &mut Graph, store: &ParameterStore, x: Var) -> Result<Var, NumError> {
        let w = g.param(store, &self.weight_name())?;
        let b = g.param(store, &self.bias_name())?;
        let xw = g.matmul(x, w)?;
        g.add_row(xw, b)
    }
}

/// Two-layer perceptron with a tanh hidden layer.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
}

impl Mlp {
    pub fn new(prefix: &str, input: usize, hidden: usize, output: usize) -> Self {
        Self {
            hidden: Linear::new(format!("{prefix}.l1"), input, hidden),
            out: Linear::new(format!("{prefix}.l2"), hidden, output),
        }
    }

    pub fn register(&self, store: &mut ParameterStore, rng: &mut impl Rng) {
        self.hidden.register(store, rng);
        self.out.register(store, rng);
    }

    pub fn forward(&self, g: &mut Graph, store: &ParameterStore, x: Var) -> Result<Var, NumError> {
        let h = self.hidden.forward(g, store, x)?;
        let h = g.tanh(h)?;
        self.out.forward(g, store, h)
    }
}

/// Standard LSTM cell; gate columns are ordered input, forget, cell, output.
#[derive(Clone, Debug)]
pub struct Lstm {
    pub prefix: String,
    pub input: usize,
    pub hidden: usize,
}

/// Parameter nodes of one LSTM loaded onto a tape.
#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub wx: Var,
    pub wh: Var,
    pub b: Var,
}

impl Lstm {
    pub fn new(prefix: impl Into<String>, input: usize, hidden: usize) -> Self {
        Self {
            prefix: prefix.into(),
            input,
            hidden,
        }
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{part}", self.prefix)
    }

    pub fn register(&self, store: &mut ParameterStore, rng: &mut impl Rng) {
        let h = self.hidden;
        store.insert_xavier(&self.name("wx"), self.input, 4 * h, rng);
        store.insert_xavier(&self.name("wh"), h, 4 * h, rng);
        let mut b = Tensor::zeros(1, 4 * h);
        for j in h..2 * h {
            b.set(0, j, 1.0);
        }
        store.insert(self.name("b"), b);
    }

    pub fn load(&self, g: &mut Graph, store: &ParameterStore) -> Result<LstmVars, NumError> {
        Ok(LstmVars {
            wx: g.param(store, &self.name("wx"))?,
            wh: g.param(store, &self.name("wh"))?,
            b: g.param(store, &self.name("b"))?,
        })
    }

    pub fn zero_state(&self, g: &mut Graph) -> Result<(Var, Var), NumError> {
        let h = g.input(Tensor::zeros(1, self.hidden))?;
        let c = g.input(Tensor::zeros(1, self.hidden))?;
        Ok((h, c))
    }

    /// One cell update given the already projected input `x·Wx + b`.
    fn cell(
        &self,
        g: &mut Graph,
        vars: &LstmVars,
        projected: Var,
        (h, c): (Var, Var),
    ) -> Result<(Var, Var), NumError> {
        let n = self.hidden;
        let hw = g.matmul(h, vars.wh)?;
        let z = g.add(projected, hw)?;
        let i = g.slice_cols(z, 0, n)?;
        let f = g.slice_cols(z, n, n)?;
        let u = g.slice_cols(z, 2 * n, n)?;
        let o = g.slice_cols(z, 3 * n, n)?;
        let i = g.sigmoid(i)?;
        let f = g.sigmoid(f)?;
        let u = g.tanh(u)?;
        let o = g.sigmoid(o)?;
        let fc = g.mul(f, c)?;
        let iu = g.mul(i, u)?;
        let c_next = g.add(fc, iu)?;
        let tc = g.tanh(c_next)?;
        let h_next = g.mul(o, tc)?;
        Ok((h_next, c_next))
    }

    /// Single step on a `1 × input` row.
    pub fn step(
        &self,
        g: &mut Graph,
        vars: &LstmVars,
        x: Var,
        state: (Var, Var),
    ) -> Result<(Var, Var), NumError> {
        if g.value(x).shape() != [1, self.input] {
            return Err(NumError::Shape {
                op: "lstm_step",
                left: g.value(x).shape().to_vec(),
                right: vec![1, self.input],
            });
        }
        let xw = g.matmul(x, vars.wx)?;
        let proj = g.add_row(xw, vars.b)?;
        self.cell(g, vars, proj, state)
    }

    /// Runs over the rows of `xs` (L × input), returning all hidden states
    /// stacked as L × hidden. `reverse` processes rows last to first but keeps
    /// the output aligned with the input order.
    pub fn sequence(
        &self,
        g: &mut Graph,
        vars: &LstmVars,
        xs: Var,
        reverse: bool,
    ) -> Result<Var, NumError> {
        let len = g.value(xs).rows();
        if g.value(xs).cols() != self.input {
            return Err(NumError::Shape {
                op: "lstm_sequence",
                left: g.value(xs).shape().to_vec(),
                right: vec![len, self.input],
            });
        }
        let xw = g.matmul(xs, vars.wx)?;
        let proj = g.add_row(xw, vars.b)?;
        let mut state = self.zero_state(g)?;
        let mut outs = vec![None; len];
        for k in 0..len {
            let t = if reverse { len - 1 - k } else { k };
            let row = g.slice_rows(proj, t, 1)?;
            state = self.cell(g, vars, row, state)?;
            outs[t] = Some(state.0);
        }
        let outs: Vec<Var> = outs.into_iter().map(|v| v.expect("filled")).collect();
        g.concat_rows(&outs)
    }
}
