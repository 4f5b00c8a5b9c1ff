use serde::{Deserialize, Serialize};

use crate::datasets::MAX_N;
use crate::error::{domain, Error, Result};
use crate::numerics::RngState;
use crate::scalar::Scalar;

pub const BRANCH_COUNT: usize = 10;
pub const BRANCH_DEPTH: usize = 5;
pub const TRUNK_DEPTH: usize = 10;

/// Activation shape: `channels x length` for the convolutional part, flat afterwards.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Seq { channels: usize, length: usize },
    Flat(usize),
}

impl Shape {
    pub fn size(self) -> usize {
        match self {
            Shape::Seq { channels, length } => channels * length,
            Shape::Flat(n) => n,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Conv1x1 { in_channels: usize, out_channels: usize },
    ReLU,
    Concat { branch_count: usize },
    /// Kernel 2, stride 2 over the flattened (channel-major) features.
    MaxPool,
    Linear { in_size: usize, out_size: usize },
    Softmax,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub input: Shape,
    pub output: Shape,
    /// Parallel branch the layer belongs to, if any.
    pub branch: Option<usize>,
}

impl LayerSpec {
    pub fn parameter_count(&self) -> usize {
        match self.kind {
            LayerKind::Conv1x1 { in_channels, out_channels } => out_channels * (in_channels + 1),
            LayerKind::Linear { in_size, out_size } => out_size * (in_size + 1),
            _ => 0,
        }
    }
}

/// Compiled form of the stages: offsets into one activation buffer and one
/// parameter vector. Convolutions and hidden linears carry a fused ReLU.
#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Op {
    Conv {
        src: usize,
        dst: usize,
        cin: usize,
        cout: usize,
        len: usize,
        w: usize,
        input_grad: bool,
    },
    Pool {
        src: usize,
        src_len: usize,
        dst: usize,
        dst_len: usize,
    },
    Linear {
        src: usize,
        nin: usize,
        nout: usize,
        dst: usize,
        w: usize,
        relu: bool,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Plan {
    pub ops: Vec<Op>,
    pub act_len: usize,
    pub logits: usize,
    /// `(weight offset, weight count, fan_in)` per weighted layer.
    pub weights: Vec<(usize, usize, usize)>,
}

/// The template network for `n` inputs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NetworkSpec {
    n: usize,
    linear_widths: [usize; 4],
    stages: Vec<LayerSpec>,
    #[serde(skip)]
    plan: Plan,
}

pub fn default_linear_widths(n: usize) -> [usize; 4] {
    [32 * n, 16 * n, 8 * n, 2]
}

/// Builds the template: ten parallel branches of five 1x1 convolutions, a
/// channel concat, max pooling, ten sequential 1x1 convolutions, max
/// pooling, four linear layers and a softmax over two classes (class 1 is
/// "out of control").
pub fn build_template_network(n: usize, linear_widths: Option<[usize; 4]>) -> Result<NetworkSpec> {
    if !(1..=MAX_N).contains(&n) {
        return Err(domain(format!("network input size must be in 1..={MAX_N}, got {n}")));
    }
    let widths = linear_widths.unwrap_or_else(|| default_linear_widths(n));
    if widths[3] != 2 || widths.windows(2).any(|w| w[0] <= w[1]) {
        return Err(domain(format!(
            "linear widths must be strictly decreasing and end in 2, got {widths:?}"
        )));
    }

    let seq = |channels, length| Shape::Seq { channels, length };
    let mut stages = Vec::new();
    let mut ops = Vec::new();
    let mut weights = Vec::new();
    let mut act = n;
    let mut par = 0;
    let concat = act + BRANCH_COUNT * (BRANCH_DEPTH - 1) * n * n;
    let mut push_conv = |stages: &mut Vec<LayerSpec>, ops: &mut Vec<Op>, src, dst, cin, cout, branch, input_grad| {
        stages.push(LayerSpec {
            kind: LayerKind::Conv1x1 {
                in_channels: cin,
                out_channels: cout,
            },
            input: seq(cin, n),
            output: seq(cout, n),
            branch,
        });
        stages.push(LayerSpec {
            kind: LayerKind::ReLU,
            input: seq(cout, n),
            output: seq(cout, n),
            branch,
        });
        ops.push(Op::Conv {
            src,
            dst,
            cin,
            cout,
            len: n,
            w: par,
            input_grad,
        });
        weights.push((par, cin * cout, cin));
        par += cout * (cin + 1);
    };

    for b in 0..BRANCH_COUNT {
        let mut src = 0;
        for d in 0..BRANCH_DEPTH {
            let cin = if d == 0 { 1 } else { n };
            // The last conv of each branch writes straight into its concat slot.
            let dst = if d + 1 == BRANCH_DEPTH {
                concat + b * n * n
            } else {
                let here = act;
                act += n * n;
                here
            };
            push_conv(&mut stages, &mut ops, src, dst, cin, n, Some(b), d > 0);
            src = dst;
        }
    }
    let concat_len = BRANCH_COUNT * n * n;
    stages.push(LayerSpec {
        kind: LayerKind::Concat {
            branch_count: BRANCH_COUNT,
        },
        input: seq(n, n),
        output: seq(BRANCH_COUNT * n, n),
        branch: None,
    });
    act = concat + concat_len;

    let pool1 = act;
    let pool1_len = concat_len / 2;
    stages.push(LayerSpec {
        kind: LayerKind::MaxPool,
        input: seq(BRANCH_COUNT * n, n),
        output: seq(BRANCH_COUNT * n / 2, n),
        branch: None,
    });
    ops.push(Op::Pool {
        src: concat,
        src_len: concat_len,
        dst: pool1,
        dst_len: pool1_len,
    });
    act += pool1_len;

    let mut src = pool1;
    for d in 0..TRUNK_DEPTH {
        let cin = if d == 0 { BRANCH_COUNT * n / 2 } else { n };
        let dst = act;
        act += n * n;
        push_conv(&mut stages, &mut ops, src, dst, cin, n, None, true);
        src = dst;
    }

    let pool2_len = (n * n).div_ceil(2);
    stages.push(LayerSpec {
        kind: LayerKind::MaxPool,
        input: seq(n, n),
        output: Shape::Flat(pool2_len),
        branch: None,
    });
    ops.push(Op::Pool {
        src,
        src_len: n * n,
        dst: act,
        dst_len: pool2_len,
    });
    let mut src = act;
    act += pool2_len;

    let mut nin = pool2_len;
    for (i, &nout) in widths.iter().enumerate() {
        let relu = i < 3;
        stages.push(LayerSpec {
            kind: LayerKind::Linear { in_size: nin, out_size: nout },
            input: Shape::Flat(nin),
            output: Shape::Flat(nout),
            branch: None,
        });
        if relu {
            stages.push(LayerSpec {
                kind: LayerKind::ReLU,
                input: Shape::Flat(nout),
                output: Shape::Flat(nout),
                branch: None,
            });
        }
        ops.push(Op::Linear {
            src,
            nin,
            nout,
            dst: act,
            w: par,
            relu,
        });
        weights.push((par, nin * nout, nin));
        par += nout * (nin + 1);
        src = act;
        act += nout;
        nin = nout;
    }
    stages.push(LayerSpec {
        kind: LayerKind::Softmax,
        input: Shape::Flat(2),
        output: Shape::Flat(2),
        branch: None,
    });

    let plan = Plan {
        ops,
        act_len: act,
        logits: src,
        weights,
    };
    debug_assert_eq!(par, stages.iter().map(LayerSpec::parameter_count).sum::<usize>());
    Ok(NetworkSpec {
        n,
        linear_widths: widths,
        stages,
        plan,
    })
}

impl NetworkSpec {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn linear_widths(&self) -> [usize; 4] {
        self.linear_widths
    }

    pub fn stages(&self) -> &[LayerSpec] {
        &self.stages
    }

    pub fn parameter_count(&self) -> usize {
        self.stages.iter().map(LayerSpec::parameter_count).sum()
    }

    pub(crate) fn plan(&self) -> &Plan {
        &self.plan
    }

    pub(crate) fn check_input<S>(&self, x: &[S]) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::Shape(format!(
                "network expects {} inputs, got {}",
                self.n,
                x.len()
            )));
        }
        Ok(())
    }
}

/// All weights and biases, flattened in stage order; each weighted layer is
/// its `out x in` weight matrix (row-major) followed by its bias vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters<S> {
    pub(crate) values: Vec<S>,
}

impl<S: Scalar> Parameters<S> {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        Self {
            values: vec![S::zero(); spec.parameter_count()],
        }
    }

    pub fn from_vec(spec: &NetworkSpec, values: Vec<S>) -> Result<Self> {
        if values.len() != spec.parameter_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                spec.parameter_count(),
                values.len()
            )));
        }
        Ok(Self { values })
    }

    /// Weights from `N(0, 2 / fan_in)`, biases zero.
    pub fn init(spec: &NetworkSpec, rng: &mut RngState) -> Self {
        let mut p = Self::zeros(spec);
        for &(offset, count, fan_in) in &spec.plan().weights {
            let sd = (2.0 / fan_in as f64).sqrt();
            for w in &mut p.values[offset..offset + count] {
                *w = S::lit(rng.normal(0.0, sd));
            }
        }
        p
    }

    pub fn as_slice(&self) -> &[S] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}
