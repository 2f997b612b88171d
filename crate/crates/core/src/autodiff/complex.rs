use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::real::Real;

/// Complex tensor stored as separate real and imaginary parts.
#[derive(Debug, Clone, PartialEq)]
pub struct CTensor<T> {
    pub re: Tensor<T>,
    pub im: Tensor<T>,
}

impl<T: Real> CTensor<T> {
    pub fn new(re: Tensor<T>, im: Tensor<T>) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(Error::ShapeMismatch {
                op: "ctensor",
                lhs: re.shape().to_vec(),
                rhs: im.shape().to_vec(),
            });
        }
        Ok(CTensor { re, im })
    }

    pub fn from_real(re: Tensor<T>) -> Self {
        let im = Tensor::zeros(re.shape().to_vec());
        CTensor { re, im }
    }

    pub fn shape(&self) -> &[usize] {
        self.re.shape()
    }

    pub fn abs(&self) -> Vec<T> {
        self.re
            .data()
            .iter()
            .zip(self.im.data())
            .map(|(&a, &b)| a.hypot(b))
            .collect()
    }

    pub fn energy(&self) -> T {
        self.re
            .data()
            .iter()
            .zip(self.im.data())
            .map(|(&a, &b)| a * a + b * b)
            .sum()
    }

    pub fn cast<U: Real>(&self) -> CTensor<U> {
        CTensor {
            re: self.re.cast(),
            im: self.im.cast(),
        }
    }
}

/// Complex node: a pair of real nodes of identical shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CVar {
    pub re: Var,
    pub im: Var,
}

impl<T: Real> Graph<T> {
    pub fn cconstant(&mut self, z: CTensor<T>) -> CVar {
        CVar {
            re: self.constant(z.re),
            im: self.constant(z.im),
        }
    }

    pub fn cparam(&mut self, z: CTensor<T>) -> CVar {
        CVar {
            re: self.param(z.re),
            im: self.param(z.im),
        }
    }

    /// Real tensor promoted to a complex one with a constant zero imaginary part.
    pub fn complex_from_real(&mut self, re: Var) -> CVar {
        let im = self.constant(Tensor::zeros(self.shape(re).to_vec()));
        CVar { re, im }
    }

    pub fn cvalue(&self, z: CVar) -> CTensor<T> {
        CTensor {
            re: self.value(z.re).clone(),
            im: self.value(z.im).clone(),
        }
    }

    pub fn cadd(&mut self, a: CVar, b: CVar) -> Result<CVar> {
        Ok(CVar {
            re: self.add(a.re, b.re)?,
            im: self.add(a.im, b.im)?,
        })
    }

    pub fn csub(&mut self, a: CVar, b: CVar) -> Result<CVar> {
        Ok(CVar {
            re: self.sub(a.re, b.re)?,
            im: self.sub(a.im, b.im)?,
        })
    }

    /// Elementwise complex product (scalar broadcast allowed on either side).
    pub fn cmul(&mut self, a: CVar, b: CVar) -> Result<CVar> {
        let rr = self.mul(a.re, b.re)?;
        let ii = self.mul(a.im, b.im)?;
        let ri = self.mul(a.re, b.im)?;
        let ir = self.mul(a.im, b.re)?;
        Ok(CVar {
            re: self.sub(rr, ii)?,
            im: self.add(ri, ir)?,
        })
    }

    pub fn conj(&mut self, a: CVar) -> CVar {
        CVar {
            re: a.re,
            im: self.neg(a.im),
        }
    }

    /// Multiplies both parts by a real node (usually a scalar).
    pub fn cscale(&mut self, a: CVar, s: Var) -> Result<CVar> {
        Ok(CVar {
            re: self.mul(a.re, s)?,
            im: self.mul(a.im, s)?,
        })
    }

    /// Divides both parts by a real node (usually a scalar).
    pub fn cdiv_real(&mut self, a: CVar, s: Var) -> Result<CVar> {
        Ok(CVar {
            re: self.div(a.re, s)?,
            im: self.div(a.im, s)?,
        })
    }

    pub fn cmodulus(&mut self, a: CVar) -> Result<Var> {
        self.cabs(a.re, a.im)
    }

    /// `|a|^2` elementwise.
    pub fn cabs2(&mut self, a: CVar) -> Result<Var> {
        let r = self.square(a.re);
        let i = self.square(a.im);
        self.add(r, i)
    }

    /// `sum |a|^2`.
    pub fn cnorm2(&mut self, a: CVar) -> Result<Var> {
        let m = self.cabs2(a)?;
        Ok(self.sum(m))
    }

    /// `<a, b> = sum conj(a) * b`, conjugate-linear in the first argument.
    pub fn cinner(&mut self, a: CVar, b: CVar) -> Result<CVar> {
        let ca = self.conj(a);
        let p = self.cmul(ca, b)?;
        Ok(CVar {
            re: self.sum(p.re),
            im: self.sum(p.im),
        })
    }

    pub fn cfft2(&mut self, a: CVar) -> Result<CVar> {
        let (re, im) = self.fft2(a.re, a.im)?;
        Ok(CVar { re, im })
    }

    pub fn cifft2(&mut self, a: CVar) -> Result<CVar> {
        let (re, im) = self.ifft2(a.re, a.im)?;
        Ok(CVar { re, im })
    }

    pub fn croll2d(&mut self, a: CVar, dr: isize, dc: isize) -> Result<CVar> {
        Ok(CVar {
            re: self.roll2d(a.re, dr, dc)?,
            im: self.roll2d(a.im, dr, dc)?,
        })
    }

    pub fn creshape(&mut self, a: CVar, shape: &[usize]) -> Result<CVar> {
        Ok(CVar {
            re: self.reshape(a.re, shape.to_vec())?,
            im: self.reshape(a.im, shape.to_vec())?,
        })
    }
}
