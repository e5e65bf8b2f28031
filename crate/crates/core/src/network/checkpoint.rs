use std::io::{BufRead, Write};

use super::{Activation, MlpSpec, NetworkError, ParamVector};

pub const CHECKPOINT_MAGIC: &str = "stpinn-ckpt v1";

/// Text header with the spec, a `---` separator, then parameters as
/// little-endian `f64` in flat order.
pub fn write_checkpoint<W: Write>(mut w: W, spec: &MlpSpec, params: &ParamVector) -> Result<(), NetworkError> {
    params.check_len(spec)?;
    writeln!(w, "{CHECKPOINT_MAGIC}")?;
    writeln!(w, "input_dim={}", spec.input_dim)?;
    writeln!(w, "hidden_layers={}", spec.hidden_layers)?;
    writeln!(w, "hidden_width={}", spec.hidden_width)?;
    writeln!(w, "output_dim={}", spec.output_dim)?;
    writeln!(w, "activation={}", spec.activation.name())?;
    writeln!(w, "n_params={}", params.len())?;
    writeln!(w, "---")?;
    for v in &params.values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: BufRead>(mut r: R) -> Result<(MlpSpec, ParamVector), NetworkError> {
    let bad = |m: String| NetworkError::Checkpoint(m);
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim_end_matches('\n') != CHECKPOINT_MAGIC {
        return Err(bad(format!("unknown header {:?}", line.trim_end())));
    }
    let (mut input_dim, mut layers, mut width, mut out, mut act, mut n_params) = (None, None, None, None, None, None);
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(bad("missing '---' separator".into()));
        }
        let l = line.trim_end_matches('\n');
        if l == "---" {
            break;
        }
        let (k, v) = l.split_once('=').ok_or_else(|| bad(format!("expected key=value, got {l:?}")))?;
        let num = || v.parse::<usize>().map_err(|_| bad(format!("bad value for {k}: {v:?}")));
        match k {
            "input_dim" => input_dim = Some(num()?),
            "hidden_layers" => layers = Some(num()?),
            "hidden_width" => width = Some(num()?),
            "output_dim" => out = Some(num()?),
            "n_params" => n_params = Some(num()?),
            "activation" => act = Some(Activation::parse(v).ok_or_else(|| bad(format!("unknown activation {v:?}")))?),
            _ => return Err(bad(format!("unknown key {k:?}"))),
        }
    }
    let missing = |name: &str| bad(format!("missing {name}"));
    let spec = MlpSpec {
        input_dim: input_dim.ok_or_else(|| missing("input_dim"))?,
        hidden_layers: layers.ok_or_else(|| missing("hidden_layers"))?,
        hidden_width: width.ok_or_else(|| missing("hidden_width"))?,
        output_dim: out.ok_or_else(|| missing("output_dim"))?,
        activation: act.ok_or_else(|| missing("activation"))?,
    };
    spec.validate()?;
    let n = spec.param_count();
    if let Some(declared) = n_params {
        if declared != n {
            return Err(bad(format!("n_params {declared} does not match spec ({n})")));
        }
    }
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != n * 8 {
        return Err(bad(format!("expected {} parameter bytes, found {}", n * 8, bytes.len())));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((spec, ParamVector { values }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::init_params;

    #[test]
    fn round_trip_is_bit_exact() {
        let spec = MlpSpec::new(2, 3, 9, 2).unwrap();
        let mut p = init_params(&spec, 4);
        p.values[0] = f64::MIN_POSITIVE / 3.0;
        p.values[1] = -0.0;
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &spec, &p).unwrap();
        assert!(buf.starts_with(b"stpinn-ckpt v1\n"));
        let (s2, p2) = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(s2, spec);
        assert!(p.values.iter().zip(&p2.values).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn rejects_unknown_version_and_truncation() {
        let spec = MlpSpec::new(2, 1, 2, 1).unwrap();
        let p = init_params(&spec, 0);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &spec, &p).unwrap();
        let mut v2 = buf.clone();
        v2[13] = b'2';
        assert!(read_checkpoint(&v2[..]).is_err());
        buf.pop();
        assert!(read_checkpoint(&buf[..]).is_err());
    }
}
