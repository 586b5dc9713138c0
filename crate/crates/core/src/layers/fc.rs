use crate::error::{config_err, shape_err, Result};
use crate::tensor::Tensor;

/// Fully connected layer with optional grouping. The weight is stored
/// compactly as `(Out, In/groups)`: output block `i` only sees input block `i`.
/// `groups = 1` is a dense layer.
#[derive(Clone, Debug, PartialEq)]
pub struct FcParams {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub groups: usize,
}

pub fn fc_param_count(inputs: usize, outputs: usize, groups: usize, bias: bool) -> usize {
    inputs * outputs / groups + if bias { outputs } else { 0 }
}

pub fn grouped_fc(x: &Tensor, p: &FcParams) -> Result<Tensor> {
    grouped_fc_forward(x, &p.weight, p.bias.as_ref(), p.groups)
}

struct Blocks {
    n: usize,
    inputs: usize,
    outputs: usize,
    in_per: usize,
    out_per: usize,
}

fn blocks(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, groups: usize) -> Result<Blocks> {
    let (xd, wd) = (x.dims(), w.dims());
    if xd.len() != 2 || wd.len() != 2 {
        return shape_err(format!("grouped_fc expects (N,In) and (Out,In/G), got {} and {}", x.shape(), w.shape()));
    }
    let (inputs, outputs) = (xd[1], wd[0]);
    if groups == 0 || inputs % groups != 0 || outputs % groups != 0 {
        return config_err(format!("groups={groups} must divide In={inputs} and Out={outputs}"));
    }
    if wd[1] != inputs / groups {
        return shape_err(format!(
            "grouped_fc weight {} does not fit In={inputs} with {groups} groups",
            w.shape()
        ));
    }
    if let Some(b) = bias {
        if b.dims() != [outputs] {
            return shape_err(format!("grouped_fc bias {} does not match Out={outputs}", b.shape()));
        }
    }
    Ok(Blocks {
        n: xd[0],
        inputs,
        outputs,
        in_per: inputs / groups,
        out_per: outputs / groups,
    })
}

pub fn grouped_fc_forward(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, groups: usize) -> Result<Tensor> {
    let b = blocks(x, w, bias, groups)?;
    let mut out = Vec::with_capacity(b.n * b.outputs);
    for row in x.data().chunks_exact(b.inputs) {
        for o in 0..b.outputs {
            let start = (o / b.out_per) * b.in_per;
            let xs = &row[start..start + b.in_per];
            let ws = &w.data()[o * b.in_per..(o + 1) * b.in_per];
            let mut acc: f64 = xs.iter().zip(ws).map(|(a, c)| a * c).sum();
            if let Some(bias) = bias {
                acc += bias.data()[o];
            }
            out.push(acc);
        }
    }
    Tensor::from_vec(&[b.n, b.outputs], out)
}

/// Returns `(dx, dw, db)`.
pub fn grouped_fc_backward(x: &Tensor, w: &Tensor, gy: &Tensor, groups: usize) -> Result<(Tensor, Tensor, Tensor)> {
    let b = blocks(x, w, None, groups)?;
    if gy.dims() != [b.n, b.outputs] {
        return shape_err(format!("grouped_fc upstream gradient has shape {}", gy.shape()));
    }
    let mut dx = vec![0.0; x.numel()];
    let mut dw = vec![0.0; w.numel()];
    let mut db = vec![0.0; b.outputs];
    for n in 0..b.n {
        let xrow = &x.data()[n * b.inputs..(n + 1) * b.inputs];
        let dxrow = &mut dx[n * b.inputs..(n + 1) * b.inputs];
        for o in 0..b.outputs {
            let g = gy.data()[n * b.outputs + o];
            db[o] += g;
            let start = (o / b.out_per) * b.in_per;
            let ws = &w.data()[o * b.in_per..(o + 1) * b.in_per];
            let dws = &mut dw[o * b.in_per..(o + 1) * b.in_per];
            for j in 0..b.in_per {
                dws[j] += g * xrow[start + j];
                dxrow[start + j] += g * ws[j];
            }
        }
    }
    Ok((
        Tensor::from_vec(x.dims(), dx)?,
        Tensor::from_vec(w.dims(), dw)?,
        Tensor::from_vec(&[b.outputs], db)?,
    ))
}
