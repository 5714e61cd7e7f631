//! Little-endian binary mesh format with an optional JSON sidecar.
//!
//! Layout: magic, version, header counts, node array, element records, side
//! records. All floats are raw IEEE-754 bits, so write/read roundtrips are
//! bit-exact.

use super::{Element, ElementType, Mesh, MeshError, Side};
use crate::sfc::{BoundingBox, SfcIndex};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::Serialize;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"SFCMESH\0";
const VERSION: u32 = 1;

pub fn write_mesh(mesh: &Mesh, path: &Path) -> Result<(), MeshError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u32::<LittleEndian>(mesh.sort_level)?;
    for d in 0..3 {
        w.write_f64::<LittleEndian>(mesh.domain.min[d])?;
    }
    for d in 0..3 {
        w.write_f64::<LittleEndian>(mesh.domain.max[d])?;
    }
    w.write_u64::<LittleEndian>(mesh.nodes.len() as u64)?;
    w.write_u64::<LittleEndian>(mesh.elements.len() as u64)?;
    w.write_u64::<LittleEndian>(mesh.sides.len() as u64)?;
    for &c in &mesh.counts_by_type() {
        w.write_u64::<LittleEndian>(c as u64)?;
    }
    for n in &mesh.nodes {
        for d in 0..3 {
            w.write_f64::<LittleEndian>(n[d])?;
        }
    }
    for e in &mesh.elements {
        w.write_u8(e.element_type as u8)?;
        for &id in &e.node_ids {
            w.write_u64::<LittleEndian>(id as u64)?;
        }
        for d in 0..3 {
            w.write_f64::<LittleEndian>(e.barycenter[d])?;
        }
        w.write_f64::<LittleEndian>(e.jacobian)?;
        w.write_u64::<LittleEndian>(e.sfc_index.0)?;
    }
    for s in &mesh.sides {
        w.write_u8(s.node_ids.len() as u8)?;
        for &id in &s.node_ids {
            w.write_u64::<LittleEndian>(id as u64)?;
        }
        w.write_u64::<LittleEndian>(s.master_elem as u64)?;
        w.write_u8(s.master_face as u8)?;
        match s.slave_elem {
            None => w.write_u8(0)?,
            Some(se) => {
                w.write_u8(1)?;
                w.write_u64::<LittleEndian>(se as u64)?;
                w.write_u8(s.slave_face.unwrap() as u8)?;
            }
        }
        match &s.slave_node_ids {
            None => w.write_u8(0)?,
            Some(ids) => {
                w.write_u8(1)?;
                for &id in ids {
                    w.write_u64::<LittleEndian>(id as u64)?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read + Seek> Reader<R> {
    fn offset(&mut self) -> u64 {
        self.inner.stream_position().unwrap_or(0)
    }

    fn fail<T>(&mut self, msg: &str) -> Result<T, MeshError> {
        Err(MeshError::Parse {
            offset: self.offset(),
            msg: msg.to_string(),
        })
    }

    fn u8(&mut self) -> Result<u8, MeshError> {
        self.inner.read_u8().map_err(|e| self.truncated(e))
    }

    fn u32(&mut self) -> Result<u32, MeshError> {
        self.inner
            .read_u32::<LittleEndian>()
            .map_err(|e| self.truncated(e))
    }

    fn u64(&mut self) -> Result<u64, MeshError> {
        self.inner
            .read_u64::<LittleEndian>()
            .map_err(|e| self.truncated(e))
    }

    fn usize_bounded(&mut self, bound: usize, what: &str) -> Result<usize, MeshError> {
        let v = self.u64()? as usize;
        if v >= bound {
            return self.fail(&format!("{what} index {v} out of range (< {bound})"));
        }
        Ok(v)
    }

    fn f64(&mut self) -> Result<f64, MeshError> {
        self.inner
            .read_f64::<LittleEndian>()
            .map_err(|e| self.truncated(e))
    }

    fn truncated(&mut self, e: std::io::Error) -> MeshError {
        MeshError::Parse {
            offset: self.offset(),
            msg: format!("unexpected end of file ({e})"),
        }
    }
}

pub fn read_mesh(path: &Path) -> Result<Mesh, MeshError> {
    let mut r = Reader {
        inner: BufReader::new(File::open(path)?),
    };
    let mut magic = [0u8; 8];
    r.inner.read_exact(&mut magic).map_err(|e| r.truncated(e))?;
    if &magic != MAGIC {
        return r.fail("bad magic");
    }
    let version = r.u32()?;
    if version != VERSION {
        return r.fail(&format!("unsupported version {version}"));
    }
    let sort_level = r.u32()?;
    let mut min = [0.0; 3];
    let mut max = [0.0; 3];
    for d in &mut min {
        *d = r.f64()?;
    }
    for d in &mut max {
        *d = r.f64()?;
    }
    let n_nodes = r.u64()? as usize;
    let n_elems = r.u64()? as usize;
    let n_sides = r.u64()? as usize;
    let mut header_counts = [0usize; 4];
    for c in &mut header_counts {
        *c = r.u64()? as usize;
    }

    let mut nodes = Vec::with_capacity(n_nodes);
    for _ in 0..n_nodes {
        nodes.push([r.f64()?, r.f64()?, r.f64()?]);
    }
    let mut elements = Vec::with_capacity(n_elems);
    for _ in 0..n_elems {
        let ty = r.u8()?;
        let Some(ty) = ElementType::from_u8(ty) else {
            return r.fail(&format!("unknown element type {ty}"));
        };
        let mut node_ids = Vec::with_capacity(ty.node_count());
        for _ in 0..ty.node_count() {
            node_ids.push(r.usize_bounded(n_nodes, "node")?);
        }
        let barycenter = [r.f64()?, r.f64()?, r.f64()?];
        let jacobian = r.f64()?;
        let sfc_index = SfcIndex(r.u64()?);
        elements.push(Element {
            element_type: ty,
            node_ids,
            barycenter,
            jacobian,
            sfc_index,
        });
    }
    let mut sides = Vec::with_capacity(n_sides);
    for _ in 0..n_sides {
        let n = r.u8()? as usize;
        if n != 3 && n != 4 {
            return r.fail(&format!("side with {n} nodes"));
        }
        let mut node_ids = Vec::with_capacity(n);
        for _ in 0..n {
            node_ids.push(r.usize_bounded(n_nodes, "node")?);
        }
        let master_elem = r.usize_bounded(n_elems, "element")?;
        let master_face = r.u8()? as usize;
        let (slave_elem, slave_face) = match r.u8()? {
            0 => (None, None),
            1 => (
                Some(r.usize_bounded(n_elems, "element")?),
                Some(r.u8()? as usize),
            ),
            v => return r.fail(&format!("bad slave flag {v}")),
        };
        let slave_node_ids = match r.u8()? {
            0 => None,
            1 => {
                let mut ids = Vec::with_capacity(n);
                for _ in 0..n {
                    ids.push(r.usize_bounded(n_nodes, "node")?);
                }
                Some(ids)
            }
            v => return r.fail(&format!("bad slave-nodes flag {v}")),
        };
        sides.push(Side {
            node_ids,
            master_elem,
            master_face,
            slave_elem,
            slave_face,
            slave_node_ids,
        });
    }

    let mesh = Mesh {
        nodes,
        elements,
        sides,
        domain: BoundingBox::new(min, max),
        sort_level,
    };
    if mesh.counts_by_type() != header_counts {
        return r.fail("element counts inconsistent with header");
    }
    Ok(mesh)
}

#[derive(Serialize)]
struct Sidecar {
    version: u32,
    sort_level: u32,
    n_nodes: usize,
    n_elems: usize,
    n_sides: usize,
    counts_by_type: CountsByType,
    domain_min: [f64; 3],
    domain_max: [f64; 3],
    total_volume: f64,
}

#[derive(Serialize)]
struct CountsByType {
    hex: usize,
    tet: usize,
    prism: usize,
    pyramid: usize,
}

/// Human-readable JSON summary next to the binary mesh.
pub fn write_sidecar(mesh: &Mesh, mesh_path: &Path) -> Result<(), MeshError> {
    let [hex, tet, prism, pyramid] = mesh.counts_by_type();
    let sidecar = Sidecar {
        version: VERSION,
        sort_level: mesh.sort_level,
        n_nodes: mesh.nodes.len(),
        n_elems: mesh.elements.len(),
        n_sides: mesh.sides.len(),
        counts_by_type: CountsByType {
            hex,
            tet,
            prism,
            pyramid,
        },
        domain_min: mesh.domain.min,
        domain_max: mesh.domain.max,
        total_volume: mesh.total_volume(),
    };
    let path = mesh_path.with_extension("json");
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, &sidecar)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::Other, e))?;
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::{generate_box_mesh, mixed_box_preset};
    use super::*;
    use crate::sfc::BoundingBox;

    #[test]
    fn roundtrip_hex_box() {
        let m = generate_box_mesh(8, 8, 8, BoundingBox::new([0.0; 3], [1.0; 3])).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hex.mesh");
        write_mesh(&m, &path).unwrap();
        let back = read_mesh(&path).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn roundtrip_mixed() {
        let m = mixed_box_preset().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mixed.mesh");
        write_mesh(&m, &path).unwrap();
        write_sidecar(&m, &path).unwrap();
        let back = read_mesh(&path).unwrap();
        assert_eq!(m, back);
        assert!(path.with_extension("json").exists());
    }

    #[test]
    fn truncated_file_is_parse_error() {
        let m = generate_box_mesh(2, 2, 2, BoundingBox::new([0.0; 3], [1.0; 3])).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.mesh");
        write_mesh(&m, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let cut = path.with_file_name("cut.mesh");
        std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(read_mesh(&cut), Err(MeshError::Parse { .. })));
    }
}
