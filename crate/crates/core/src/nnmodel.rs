//! Piecewise-linear feedforward networks and the NNW text format.
//!
//! ```text
//! NNW 1
//! name <string-without-spaces>
//! input <d_in>
//! layers <L>
//! layer <d_out> <relu|linear>
//! <d_out rows; each row: d_prev weights then the bias>
//! ```
//!
//! Numbers are written in the shortest decimal form that parses back to the
//! same `f64`, so `parse(serialize(net)) == net` bit for bit.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid network: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Linear,
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Linear => "linear",
        })
    }
}

impl FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relu" => Ok(Activation::Relu),
            "linear" => Ok(Activation::Linear),
            other => Err(format!("unknown activation '{other}'")),
        }
    }
}

/// `σ(W x + b)` with a row-major `out_dim × in_dim` weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineLayer {
    pub out_dim: usize,
    pub in_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl AffineLayer {
    /// Builds a layer from weight rows.
    pub fn new(rows: Vec<Vec<f64>>, bias: Vec<f64>, activation: Activation) -> Result<Self, NnError> {
        let out_dim = rows.len();
        let in_dim = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != in_dim) {
            return Err(NnError::DimensionMismatch {
                expected: in_dim,
                found: r.len(),
            });
        }
        if bias.len() != out_dim {
            return Err(NnError::DimensionMismatch {
                expected: out_dim,
                found: bias.len(),
            });
        }
        Ok(Self {
            out_dim,
            in_dim,
            weights: rows.into_iter().flatten().collect(),
            bias,
            activation,
        })
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.in_dim..(i + 1) * self.in_dim]
    }

    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.in_dim + j]
    }

    /// Pre-activation values `W x + b`.
    pub fn pre_activation(&self, x: &[f64]) -> Vec<f64> {
        (0..self.out_dim)
            .map(|i| {
                let mut acc = 0.0;
                for (w, xj) in self.row(i).iter().zip(x) {
                    acc += w * xj;
                }
                acc + self.bias[i]
            })
            .collect()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.pre_activation(x);
        if self.activation == Activation::Relu {
            for v in &mut y {
                *v = v.max(0.0);
            }
        }
        y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub name: String,
    pub input_dim: usize,
    pub layers: Vec<AffineLayer>,
}

impl Network {
    /// Builds a network and checks every invariant.
    pub fn new(name: impl Into<String>, input_dim: usize, layers: Vec<AffineLayer>) -> Result<Self, NnError> {
        let net = Self {
            name: name.into(),
            input_dim,
            layers,
        };
        let v = net.validate();
        if v.is_empty() {
            Ok(net)
        } else {
            Err(NnError::Invalid(v))
        }
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, |l| l.out_dim)
    }

    /// Total number of ReLU units.
    pub fn relu_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| l.activation == Activation::Relu)
            .map(|l| l.out_dim)
            .sum()
    }

    /// Lists every invariant violation; empty iff the network is well formed.
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.input_dim == 0 {
            out.push("input dimension must be positive".to_string());
        }
        if self.name.is_empty() || self.name.chars().any(char::is_whitespace) {
            out.push(format!("name '{}' must be non-empty without whitespace", self.name));
        }
        if self.layers.is_empty() {
            out.push("network has no layers".to_string());
        }
        let mut prev = self.input_dim;
        for (k, l) in self.layers.iter().enumerate() {
            if l.in_dim != prev {
                out.push(format!("layer {k} expects input dimension {}, previous output is {prev}", l.in_dim));
            }
            if l.weights.len() != l.out_dim * l.in_dim {
                out.push(format!("layer {k} weight count does not match {}x{}", l.out_dim, l.in_dim));
            }
            if l.bias.len() != l.out_dim {
                out.push(format!("layer {k} has {} bias entries for {} rows", l.bias.len(), l.out_dim));
            }
            if l.out_dim == 0 {
                out.push(format!("layer {k} has no outputs"));
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                out.push(format!("layer {k} contains a non-finite value"));
            }
            prev = l.out_dim;
        }
        if let Some(last) = self.layers.last() {
            if last.activation != Activation::Linear {
                out.push("final layer must be linear".to_string());
            }
        }
        out
    }

    /// Exact layer-by-layer evaluation.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        if x.len() != self.input_dim {
            return Err(NnError::DimensionMismatch {
                expected: self.input_dim,
                found: x.len(),
            });
        }
        Ok(self.forward_unchecked(x))
    }

    pub(crate) fn forward_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for l in &self.layers {
            h = l.apply(&h);
        }
        h
    }

    /// Pre-activation values of every layer.
    pub fn pre_activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut h = x.to_vec();
        let mut out = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let y = l.pre_activation(&h);
            h = y.clone();
            if l.activation == Activation::Relu {
                for v in &mut h {
                    *v = v.max(0.0);
                }
            }
            out.push(y);
        }
        out
    }

    pub fn to_nnw(&self) -> String {
        serialize_network(self)
    }

    pub fn from_nnw(text: &str) -> Result<Self, NnError> {
        parse_network(text)
    }
}

/// `H(z) = F(D(z))`: the decoder's layers followed by the controller's.
pub fn compose(decoder: &Network, controller: &Network) -> Result<Network, NnError> {
    if decoder.output_dim() != controller.input_dim {
        return Err(NnError::DimensionMismatch {
            expected: controller.input_dim,
            found: decoder.output_dim(),
        });
    }
    let layers = decoder
        .layers
        .iter()
        .chain(&controller.layers)
        .cloned()
        .collect();
    Network::new(
        format!("{}+{}", decoder.name, controller.name),
        decoder.input_dim,
        layers,
    )
}

pub fn serialize_network(net: &Network) -> String {
    let mut s = String::new();
    writeln!(s, "NNW 1").unwrap();
    writeln!(s, "name {}", net.name).unwrap();
    writeln!(s, "input {}", net.input_dim).unwrap();
    writeln!(s, "layers {}", net.layers.len()).unwrap();
    for l in &net.layers {
        writeln!(s, "layer {} {}", l.out_dim, l.activation).unwrap();
        for i in 0..l.out_dim {
            let mut first = true;
            for v in l.row(i).iter().chain(std::iter::once(&l.bias[i])) {
                if !first {
                    s.push(' ');
                }
                first = false;
                write!(s, "{v:?}").unwrap();
            }
            s.push('\n');
        }
    }
    s
}

struct Tokens<'a> {
    toks: Vec<(usize, &'a str)>,
    pos: usize,
    last_line: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let toks = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim_start().starts_with('#'))
            .flat_map(|(i, l)| l.split_whitespace().map(move |t| (i + 1, t)))
            .collect::<Vec<_>>();
        let last_line = text.lines().count().max(1);
        Self { toks, pos: 0, last_line }
    }

    fn next(&mut self, what: &str) -> Result<(usize, &'a str), NnError> {
        match self.toks.get(self.pos) {
            Some(&t) => {
                self.pos += 1;
                Ok(t)
            }
            None => Err(NnError::Parse {
                line: self.last_line,
                message: format!("unexpected end of input, expected {what}"),
            }),
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<(), NnError> {
        let (line, t) = self.next(kw)?;
        if t != kw {
            return Err(NnError::Parse {
                line,
                message: format!("expected '{kw}', found '{t}'"),
            });
        }
        Ok(())
    }

    fn count(&mut self, what: &str) -> Result<(usize, usize), NnError> {
        let (line, t) = self.next(what)?;
        t.parse::<usize>()
            .map(|v| (line, v))
            .map_err(|_| NnError::Parse {
                line,
                message: format!("invalid {what} '{t}'"),
            })
    }

    fn number(&mut self) -> Result<f64, NnError> {
        let (line, t) = self.next("a number")?;
        let v: f64 = t.parse().map_err(|_| NnError::Parse {
            line,
            message: format!("invalid number '{t}'"),
        })?;
        if !v.is_finite() {
            return Err(NnError::Parse {
                line,
                message: format!("non-finite value '{t}'"),
            });
        }
        Ok(v)
    }
}

pub fn parse_network(text: &str) -> Result<Network, NnError> {
    let mut tk = Tokens::new(text);
    let (line, magic) = tk.next("header")?;
    if magic != "NNW" {
        return Err(NnError::Parse {
            line,
            message: format!("malformed header: expected 'NNW', found '{magic}'"),
        });
    }
    let (line, version) = tk.next("format version")?;
    if version != "1" {
        return Err(NnError::Parse {
            line,
            message: format!("unsupported format version '{version}'"),
        });
    }
    tk.keyword("name")?;
    let (_, name) = tk.next("network name")?;
    tk.keyword("input")?;
    let (line, input_dim) = tk.count("input dimension")?;
    if input_dim == 0 {
        return Err(NnError::Parse {
            line,
            message: "input dimension must be positive".into(),
        });
    }
    tk.keyword("layers")?;
    let (line, n_layers) = tk.count("layer count")?;
    if n_layers == 0 {
        return Err(NnError::Parse {
            line,
            message: "network has no layers".into(),
        });
    }
    let mut layers = Vec::with_capacity(n_layers);
    let mut prev = input_dim;
    for _ in 0..n_layers {
        tk.keyword("layer")?;
        let (line, out_dim) = tk.count("layer output dimension")?;
        if out_dim == 0 {
            return Err(NnError::Parse {
                line,
                message: "layer output dimension must be positive".into(),
            });
        }
        let (line, act) = tk.next("activation")?;
        let activation: Activation = act.parse().map_err(|message| NnError::Parse { line, message })?;
        let mut weights = Vec::with_capacity(out_dim * prev);
        let mut bias = Vec::with_capacity(out_dim);
        for _ in 0..out_dim {
            for _ in 0..prev {
                weights.push(tk.number()?);
            }
            bias.push(tk.number()?);
        }
        layers.push(AffineLayer {
            out_dim,
            in_dim: prev,
            weights,
            bias,
            activation,
        });
        prev = out_dim;
    }
    if let Some(&(line, t)) = tk.toks.get(tk.pos) {
        // Extra numbers usually mean the next layer's input dimension did not
        // match the previous layer's output.
        let message = if t.parse::<f64>().is_ok() {
            "dimension mismatch: more values than the declared layer sizes allow".to_string()
        } else {
            format!("unexpected trailing token '{t}'")
        };
        return Err(NnError::Parse { line, message });
    }
    let net = Network {
        name: name.to_string(),
        input_dim,
        layers,
    };
    let problems = net.validate();
    if !problems.is_empty() {
        return Err(NnError::Parse {
            line: tk.last_line,
            message: problems.join("; "),
        });
    }
    Ok(net)
}
