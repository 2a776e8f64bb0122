//! CSV persistence for fields: `x,u1,u2` or `x,rho,theta`, one node per row.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::{ComplexField, Grid, PolarField};

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_complex<W: Write>(u: &ComplexField, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", "u1", "u2"])?;
    for (x, v) in u.grid().nodes().zip(u.values()) {
        w.write_record([fmt(x), fmt(v[0]), fmt(v[1])])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_polar<W: Write>(p: &PolarField, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", "rho", "theta"])?;
    for ((x, r), t) in p.grid().nodes().zip(p.rho()).zip(p.theta()) {
        w.write_record([fmt(x), fmt(*r), fmt(*t)])?;
    }
    w.flush()?;
    Ok(())
}

fn read_columns<R: Read>(input: R, header: [&str; 3]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let mut r = csv::Reader::from_reader(input);
    let h = r.headers()?.clone();
    if h.iter().ne(header.iter().copied()) {
        return Err(Error::InvalidField(format!(
            "expected header {}, got {}",
            header.join(","),
            h.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let (mut a, mut b, mut c) = (vec![], vec![], vec![]);
    for rec in r.records() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::InvalidField(format!("bad number in column {i}")))
        };
        a.push(parse(0)?);
        b.push(parse(1)?);
        c.push(parse(2)?);
    }
    Ok((a, b, c))
}

fn grid_for(x: &[f64]) -> Result<Grid> {
    let g = Grid::new(x.len())?;
    for (i, &xi) in x.iter().enumerate() {
        if (xi - g.x(i)).abs() > 1e-12 {
            return Err(Error::InvalidGrid(format!("node {i} at {xi} is not uniform")));
        }
    }
    Ok(g)
}

pub fn read_complex<R: Read>(input: R, alpha: f64) -> Result<ComplexField> {
    let (x, u1, u2) = read_columns(input, ["x", "u1", "u2"])?;
    let g = grid_for(&x)?;
    ComplexField::new(g, u1.into_iter().zip(u2).map(|(a, b)| [a, b]).collect(), alpha)
}

pub fn read_polar<R: Read>(input: R, alpha: f64) -> Result<PolarField> {
    let (x, rho, theta) = read_columns(input, ["x", "rho", "theta"])?;
    let g = grid_for(&x)?;
    PolarField::new(g, rho, theta, alpha)
}

pub fn save_complex(u: &ComplexField, path: &Path) -> Result<()> {
    write_complex(u, std::fs::File::create(path)?)
}

pub fn save_polar(p: &PolarField, path: &Path) -> Result<()> {
    write_polar(p, std::fs::File::create(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::make_grid;

    #[test]
    fn complex_round_trip_is_exact() {
        let g = make_grid(17).unwrap();
        let u = ComplexField::from_fn(g, 0.3, |x| [(5.0 * x).cos() / 3.0, (x * x).sin()]).unwrap();
        let mut buf = Vec::new();
        write_complex(&u, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x,u1,u2\n"));
        let back = read_complex(buf.as_slice(), 0.3).unwrap();
        assert_eq!(back, u);
    }

    #[test]
    fn polar_round_trip_is_exact() {
        let g = make_grid(9).unwrap();
        let p = crate::field::PolarField::uniform(g, 3, 1.1);
        let mut buf = Vec::new();
        write_polar(&p, &mut buf).unwrap();
        let back = read_polar(buf.as_slice(), 1.1).unwrap();
        assert_eq!(back, p);
        assert_eq!(back.winding(), 3);
    }

    #[test]
    fn wrong_header_rejected() {
        let text = "x,rho,theta\n0,1,0\n0.5,1,0\n1,1,0\n";
        assert!(read_complex(text.as_bytes(), 0.0).is_err());
    }
}
