use std::fmt;
use std::ops::{Add, AddAssign, Index, IndexMut, Sub};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// A resource dimension tracked for every VM and server.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resource {
    Cpu,
    Mem,
    Net,
    Ssd,
}

impl Resource {
    pub const ALL: [Resource; 4] = [Resource::Cpu, Resource::Mem, Resource::Net, Resource::Ssd];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        match self {
            Resource::Cpu => 0,
            Resource::Mem => 1,
            Resource::Net => 2,
            Resource::Ssd => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Resource::Cpu => "cpu",
            Resource::Mem => "mem",
            Resource::Net => "net",
            Resource::Ssd => "ssd",
        }
    }

    /// Memory is the only resource with a static guaranteed slot; the others
    /// can be reassigned between VMs at runtime.
    pub fn is_fungible(self) -> bool {
        !matches!(self, Resource::Mem)
    }
}

impl fmt::Display for Resource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownResource(pub String);

impl fmt::Display for UnknownResource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown resource `{}` (expected cpu, mem, net or ssd)", self.0)
    }
}

impl std::error::Error for UnknownResource {}

impl FromStr for Resource {
    type Err = UnknownResource;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cpu" => Ok(Resource::Cpu),
            "mem" => Ok(Resource::Mem),
            "net" => Ok(Resource::Net),
            "ssd" => Ok(Resource::Ssd),
            other => Err(UnknownResource(other.to_string())),
        }
    }
}

/// Per-resource quantities: cores, GB of memory, Gbps of network, GB of SSD.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ResourceVector {
    pub cpu: f64,
    pub mem: f64,
    pub net: f64,
    pub ssd: f64,
}

impl ResourceVector {
    pub const ZERO: ResourceVector = ResourceVector { cpu: 0.0, mem: 0.0, net: 0.0, ssd: 0.0 };

    pub const fn new(cpu: f64, mem: f64, net: f64, ssd: f64) -> Self {
        ResourceVector { cpu, mem, net, ssd }
    }

    pub fn from_fn(mut f: impl FnMut(Resource) -> f64) -> Self {
        ResourceVector { cpu: f(Resource::Cpu), mem: f(Resource::Mem), net: f(Resource::Net), ssd: f(Resource::Ssd) }
    }

    pub fn map(&self, mut f: impl FnMut(Resource, f64) -> f64) -> Self {
        Self::from_fn(|r| f(r, self[r]))
    }

    pub fn iter(&self) -> impl Iterator<Item = (Resource, f64)> + '_ {
        Resource::ALL.into_iter().map(move |r| (r, self[r]))
    }

    /// Componentwise `self <= other`.
    pub fn fits_within(&self, other: &ResourceVector) -> bool {
        Resource::ALL.iter().all(|&r| self[r] <= other[r])
    }

    pub fn is_nonnegative(&self) -> bool {
        Resource::ALL.iter().all(|&r| self[r] >= 0.0)
    }

    pub fn is_finite(&self) -> bool {
        Resource::ALL.iter().all(|&r| self[r].is_finite())
    }

    pub fn scale(&self, factor: f64) -> Self {
        self.map(|_, v| v * factor)
    }
}

impl Index<Resource> for ResourceVector {
    type Output = f64;

    fn index(&self, r: Resource) -> &f64 {
        match r {
            Resource::Cpu => &self.cpu,
            Resource::Mem => &self.mem,
            Resource::Net => &self.net,
            Resource::Ssd => &self.ssd,
        }
    }
}

impl IndexMut<Resource> for ResourceVector {
    fn index_mut(&mut self, r: Resource) -> &mut f64 {
        match r {
            Resource::Cpu => &mut self.cpu,
            Resource::Mem => &mut self.mem,
            Resource::Net => &mut self.net,
            Resource::Ssd => &mut self.ssd,
        }
    }
}

impl Add for ResourceVector {
    type Output = ResourceVector;

    fn add(self, rhs: ResourceVector) -> ResourceVector {
        ResourceVector::from_fn(|r| self[r] + rhs[r])
    }
}

impl AddAssign for ResourceVector {
    fn add_assign(&mut self, rhs: ResourceVector) {
        *self = *self + rhs;
    }
}

impl Sub for ResourceVector {
    type Output = ResourceVector;

    fn sub(self, rhs: ResourceVector) -> ResourceVector {
        ResourceVector::from_fn(|r| self[r] - rhs[r])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn componentwise_order() {
        let a = ResourceVector::new(1.0, 4.0, 1.0, 10.0);
        let b = ResourceVector::new(2.0, 4.0, 1.0, 10.0);
        assert!(a.fits_within(&b));
        assert!(!b.fits_within(&a));
        let c = ResourceVector::new(0.5, 8.0, 1.0, 10.0);
        assert!(!a.fits_within(&c) && !c.fits_within(&a));
    }

    #[test]
    fn resource_names_round_trip() {
        for r in Resource::ALL {
            assert_eq!(r.as_str().parse::<Resource>().unwrap(), r);
            assert_eq!(Resource::ALL[r.index()], r);
        }
        assert!("gpu".parse::<Resource>().is_err());
    }
}
