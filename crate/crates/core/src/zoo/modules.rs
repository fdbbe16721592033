use crate::autodiff::{ConvSpec, Tape, Var};
use crate::error::{ModuleError, TensorError};

use super::bank::{BankId, BankRegistry};
use super::ModuleKind;

/// A parameter bank resolved for one module invocation.
#[derive(Clone, Copy)]
pub struct ModuleCtx<'a> {
    pub registry: &'a BankRegistry,
    pub bank: BankId,
}

impl<'a> ModuleCtx<'a> {
    pub fn new(registry: &'a BankRegistry, bank: BankId) -> Self {
        Self { registry, bank }
    }

    pub fn token(&self) -> &'a str {
        &self.registry.bank(self.bank).token
    }

    fn kind(&self) -> ModuleKind {
        self.registry.bank(self.bank).kind
    }

    fn param(&self, tape: &mut Tape, name: &str) -> Result<Var, TensorError> {
        let slot = self.registry.bank(self.bank).slot(name).ok_or_else(|| {
            TensorError::InvalidArgument {
                op: "param",
                reason: format!("bank has no parameter `{name}`"),
            }
        })?;
        Ok(self.registry.param(tape, self.bank, slot))
    }

    fn conv(&self, tape: &mut Tape, x: Var, layer: &str, spec: ConvSpec) -> Result<Var, TensorError> {
        let w = self.param(tape, &format!("{layer}.w"))?;
        let b = self.param(tape, &format!("{layer}.b"))?;
        tape.conv2d(x, w, b, spec)
    }

    fn conv_relu(&self, tape: &mut Tape, x: Var, layer: &str, spec: ConvSpec) -> Result<Var, TensorError> {
        let y = self.conv(tape, x, layer, spec)?;
        Ok(tape.relu(y))
    }

    fn wrap<T>(&self, r: Result<T, TensorError>) -> Result<T, ModuleError> {
        r.map_err(|source| ModuleError {
            token: self.token().to_string(),
            source,
        })
    }

    fn expect_kind(&self, want: ModuleKind) -> Result<(), ModuleError> {
        if self.kind() == want {
            return Ok(());
        }
        self.wrap(Err(TensorError::InvalidArgument {
            op: "module",
            reason: format!("bank is a {:?} bank, not {want:?}", self.kind()),
        }))
    }
}

fn check_mask(tape: &Tape, mask: Var, op: &'static str) -> Result<(), TensorError> {
    let shape = tape.value(mask).shape();
    if shape.len() != 3 || shape[0] != 1 {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: shape.to_vec(),
            rhs: vec![1, 0, 0],
        });
    }
    Ok(())
}

/// Multiplies features by a single-channel mask broadcast over channels.
fn attend(tape: &mut Tape, feat: Var, mask: Var, op: &'static str) -> Result<Var, TensorError> {
    check_mask(tape, mask, op)?;
    let (fs, ms) = (tape.value(feat).shape(), tape.value(mask).shape());
    if fs.len() != 3 || fs[1..] != ms[1..] {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: fs.to_vec(),
            rhs: ms.to_vec(),
        });
    }
    tape.mul(feat, mask)
}

const SAME3: ConvSpec = ConvSpec {
    stride: 1,
    dilation: 1,
    padding: 1,
};
const POINTWISE: ConvSpec = ConvSpec {
    stride: 1,
    dilation: 1,
    padding: 0,
};

/// `cin x 4R x 4C` image to `d x R x C` features.
pub fn run_stem(tape: &mut Tape, ctx: ModuleCtx, image: Var) -> Result<Var, ModuleError> {
    ctx.expect_kind(ModuleKind::Stem)?;
    let down = ConvSpec::strided(2, 1);
    ctx.wrap((|| {
        let h = ctx.conv_relu(tape, image, "stem.conv1", down)?;
        ctx.conv_relu(tape, h, "stem.conv2", down)
    })())
}

pub fn run_attention(tape: &mut Tape, ctx: ModuleCtx, feat: Var, prev: Var) -> Result<Var, ModuleError> {
    ctx.expect_kind(ModuleKind::Attention)?;
    ctx.wrap((|| {
        let x = attend(tape, feat, prev, "attention")?;
        let x = ctx.conv_relu(tape, x, "conv1", SAME3)?;
        let x = ctx.conv_relu(tape, x, "conv2", SAME3)?;
        let x = ctx.conv(tape, x, "proj", POINTWISE)?;
        Ok(tape.sigmoid(x))
    })())
}

pub const RELATE_DILATIONS: [usize; 5] = [1, 2, 4, 8, 1];

pub fn run_relate(tape: &mut Tape, ctx: ModuleCtx, feat: Var, prev: Var) -> Result<Var, ModuleError> {
    ctx.expect_kind(ModuleKind::Relate)?;
    ctx.wrap((|| {
        let mut x = attend(tape, feat, prev, "relate")?;
        for (i, dil) in RELATE_DILATIONS.iter().enumerate() {
            x = ctx.conv_relu(tape, x, &format!("conv{}", i + 1), ConvSpec::same(3, *dil))?;
        }
        let x = ctx.conv(tape, x, "proj", POINTWISE)?;
        Ok(tape.sigmoid(x))
    })())
}

/// Row and column of the first row-major maximum of a `1 x R x C` mask.
pub fn mask_argmax(mask: &crate::Tensor) -> (usize, usize) {
    let cols = mask.shape()[2];
    let i = mask.argmax();
    (i / cols, i % cols)
}

pub fn run_same(tape: &mut Tape, ctx: ModuleCtx, feat: Var, prev: Var) -> Result<Var, ModuleError> {
    ctx.expect_kind(ModuleKind::Same)?;
    ctx.wrap((|| {
        check_mask(tape, prev, "same")?;
        let (row, col) = mask_argmax(tape.value(prev));
        let vector = tape.gather_position(feat, row, col)?;
        let corr = tape.mul(feat, vector)?;
        let x = tape.concat_channels(corr, prev)?;
        let x = ctx.conv(tape, x, "proj", POINTWISE)?;
        Ok(tape.sigmoid(x))
    })())
}

pub fn run_query(tape: &mut Tape, ctx: ModuleCtx, feat: Var, prev: Var) -> Result<Var, ModuleError> {
    ctx.expect_kind(ModuleKind::Query)?;
    ctx.wrap((|| {
        let x = attend(tape, feat, prev, "query")?;
        let x = ctx.conv_relu(tape, x, "conv1", SAME3)?;
        ctx.conv_relu(tape, x, "conv2", SAME3)
    })())
}

pub fn run_compare(tape: &mut Tape, ctx: ModuleCtx, a: Var, b: Var) -> Result<Var, ModuleError> {
    ctx.expect_kind(ModuleKind::Compare)?;
    ctx.wrap((|| {
        let (sa, sb) = (tape.value(a).shape(), tape.value(b).shape());
        if sa != sb {
            return Err(TensorError::ShapeMismatch {
                op: "compare",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let x = tape.concat_channels(a, b)?;
        let x = ctx.conv_relu(tape, x, "proj", POINTWISE)?;
        let x = ctx.conv_relu(tape, x, "conv1", SAME3)?;
        ctx.conv_relu(tape, x, "conv2", SAME3)
    })())
}

fn check_pair(tape: &Tape, a: Var, b: Var, op: &'static str) -> Result<(), TensorError> {
    check_mask(tape, a, op)?;
    check_mask(tape, b, op)?;
    let (sa, sb) = (tape.value(a).shape(), tape.value(b).shape());
    if sa != sb {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        });
    }
    Ok(())
}

pub fn run_and(tape: &mut Tape, a: Var, b: Var) -> Result<Var, ModuleError> {
    check_pair(tape, a, b, "and")
        .and_then(|_| tape.min(a, b))
        .map_err(|source| ModuleError {
            token: "and".into(),
            source,
        })
}

pub fn run_or(tape: &mut Tape, a: Var, b: Var) -> Result<Var, ModuleError> {
    check_pair(tape, a, b, "or")
        .and_then(|_| tape.max(a, b))
        .map_err(|source| ModuleError {
            token: "or".into(),
            source,
        })
}

/// Encoding to answer logits: conv, pool, conv, pool when the extent is
/// still even, then two fully-connected layers.
pub fn run_classifier(tape: &mut Tape, ctx: ModuleCtx, enc: Var) -> Result<Var, ModuleError> {
    ctx.expect_kind(ModuleKind::Classifier)?;
    let (_, second_pool) = ctx.registry.config.classifier_pooled_extent();
    ctx.wrap((|| {
        let shape = tape.value(enc).shape().to_vec();
        if shape.len() != 3 || !shape[1].is_multiple_of(2) || !shape[2].is_multiple_of(2) {
            return Err(TensorError::InvalidArgument {
                op: "classifier",
                reason: format!("needs even spatial extents, got {shape:?}"),
            });
        }
        let x = ctx.conv_relu(tape, enc, "conv1", SAME3)?;
        let x = tape.maxpool2d(x, 2, 2)?;
        let x = ctx.conv_relu(tape, x, "conv2", SAME3)?;
        let x = if second_pool { tape.maxpool2d(x, 2, 2)? } else { x };
        let n = tape.value(x).numel();
        let x = tape.reshape(x, vec![n])?;
        let w1 = ctx.param(tape, "fc1.w")?;
        let b1 = ctx.param(tape, "fc1.b")?;
        let h = tape.linear(x, w1, b1)?;
        let h = tape.relu(h);
        let w2 = ctx.param(tape, "fc2.w")?;
        let b2 = ctx.param(tape, "fc2.b")?;
        tape.linear(h, w2, b2)
    })())
}
