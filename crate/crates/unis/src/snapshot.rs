//! Versioned binary serialization of a built tree.
//!
//! The format is little-endian and self-contained: configuration, RNG
//! counters, every node with its cached size and bounding volumes, retained
//! CDF models with their samples, and pending-update reservoirs. Bounding
//! volumes are stored rather than recomputed at load so that a tree grown by
//! insertions (whose ball centers are frozen at build time) answers queries
//! identically after a round trip. Saving the same tree twice produces
//! byte-identical output.

use crate::geometry::{Mbb, Mbr, Point};
use crate::quantile::{RootModel, SubModel, SufficientStats, TwoStageCdfModel};
use crate::tree::{BmkdTree, LeafNode, Node, NonLeafNode, TChoice, TreeConfig};
use crate::{Result, UnisError};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const TREE_MAGIC: &[u8; 4] = b"UNIS";
const TREE_VERSION: u32 = 1;

pub fn save_tree<W: Write>(tree: &BmkdTree, w: &mut W) -> Result<()> {
    w.write_all(TREE_MAGIC)?;
    w.write_u32::<LittleEndian>(TREE_VERSION)?;
    w.write_u32::<LittleEndian>(tree.dims as u32)?;
    w.write_u32::<LittleEndian>(tree.resolved_t as u32)?;
    w.write_u64::<LittleEndian>(tree.seed_counter)?;
    w.write_u64::<LittleEndian>(tree.mutation_counter)?;
    let cfg = &tree.config;
    w.write_u64::<LittleEndian>(cfg.c as u64)?;
    w.write_f64::<LittleEndian>(cfg.delta)?;
    w.write_u64::<LittleEndian>(cfg.l as u64)?;
    w.write_f64::<LittleEndian>(cfg.kappa)?;
    w.write_f64::<LittleEndian>(cfg.omega)?;
    match cfg.t {
        TChoice::Auto => {
            w.write_u8(0)?;
            w.write_u32::<LittleEndian>(0)?;
        }
        TChoice::Fixed(t) => {
            w.write_u8(1)?;
            w.write_u32::<LittleEndian>(t as u32)?;
        }
    }
    w.write_u64::<LittleEndian>(cfg.rng_seed)?;
    write_node(&tree.root, w)
}

fn write_volumes<W: Write>(mbr: &Mbr, mbb: &Mbb, w: &mut W) -> Result<()> {
    for v in mbr.lo.iter().chain(mbr.hi.iter()).chain(mbb.center.iter()) {
        w.write_f64::<LittleEndian>(*v)?;
    }
    w.write_f64::<LittleEndian>(mbb.radius)?;
    Ok(())
}

fn write_node<W: Write>(node: &Node, w: &mut W) -> Result<()> {
    match node {
        Node::Leaf(leaf) => {
            w.write_u8(0)?;
            w.write_u64::<LittleEndian>(leaf.points.len() as u64)?;
            for p in &leaf.points {
                w.write_u64::<LittleEndian>(p.id)?;
                for &c in &p.coords {
                    w.write_f64::<LittleEndian>(c)?;
                }
            }
            write_volumes(&leaf.mbr, &leaf.mbb, w)
        }
        Node::Inner(inner) => {
            w.write_u8(1)?;
            w.write_u32::<LittleEndian>(inner.split_dim as u32)?;
            w.write_u64::<LittleEndian>(inner.size as u64)?;
            w.write_u32::<LittleEndian>(inner.pivots.len() as u32)?;
            for &p in &inner.pivots {
                w.write_f64::<LittleEndian>(p)?;
            }
            write_volumes(&inner.mbr, &inner.mbb, w)?;
            match &inner.model {
                None => w.write_u8(0)?,
                Some(m) => {
                    w.write_u8(1)?;
                    write_model(m, w)?;
                }
            }
            w.write_u64::<LittleEndian>(inner.pending.len() as u64)?;
            for &x in &inner.pending {
                w.write_f64::<LittleEndian>(x)?;
            }
            w.write_u32::<LittleEndian>(inner.children.len() as u32)?;
            for child in &inner.children {
                write_node(child, w)?;
            }
            Ok(())
        }
    }
}

fn write_model<W: Write>(m: &TwoStageCdfModel, w: &mut W) -> Result<()> {
    w.write_f64::<LittleEndian>(m.root.alpha)?;
    w.write_f64::<LittleEndian>(m.root.beta)?;
    w.write_u64::<LittleEndian>(m.root.l as u64)?;
    w.write_u64::<LittleEndian>(m.root.stats.n_pts as u64)?;
    w.write_f64::<LittleEndian>(m.root.stats.s_x)?;
    w.write_f64::<LittleEndian>(m.root.stats.s_x2)?;
    w.write_f64::<LittleEndian>(m.root.stats.s_u)?;
    w.write_f64::<LittleEndian>(m.root.stats.s_xu)?;
    w.write_u64::<LittleEndian>(m.subs.len() as u64)?;
    for s in &m.subs {
        w.write_f64::<LittleEndian>(s.x_min)?;
        w.write_f64::<LittleEndian>(s.x_max)?;
        w.write_f64::<LittleEndian>(s.cdf_min)?;
        w.write_f64::<LittleEndian>(s.cdf_max)?;
    }
    w.write_u64::<LittleEndian>(m.sample.len() as u64)?;
    for &(x, u) in &m.sample {
        w.write_f64::<LittleEndian>(x)?;
        w.write_f64::<LittleEndian>(u)?;
    }
    Ok(())
}

pub fn load_tree<R: Read>(r: &mut R) -> Result<BmkdTree> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != TREE_MAGIC {
        return Err(UnisError::Data("not a tree snapshot (bad magic)".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != TREE_VERSION {
        return Err(UnisError::Data(format!("unsupported snapshot version {version}")));
    }
    let dims = r.read_u32::<LittleEndian>()? as usize;
    if dims == 0 {
        return Err(UnisError::Data("snapshot has zero dimensions".into()));
    }
    let resolved_t = r.read_u32::<LittleEndian>()? as usize;
    let seed_counter = r.read_u64::<LittleEndian>()?;
    let mutation_counter = r.read_u64::<LittleEndian>()?;
    let c = r.read_u64::<LittleEndian>()? as usize;
    let delta = r.read_f64::<LittleEndian>()?;
    let l = r.read_u64::<LittleEndian>()? as usize;
    let kappa = r.read_f64::<LittleEndian>()?;
    let omega = r.read_f64::<LittleEndian>()?;
    let t_tag = r.read_u8()?;
    let t_val = r.read_u32::<LittleEndian>()? as usize;
    let t = match t_tag {
        0 => TChoice::Auto,
        1 => TChoice::Fixed(t_val),
        tag => return Err(UnisError::Data(format!("unknown t-choice tag {tag}"))),
    };
    let rng_seed = r.read_u64::<LittleEndian>()?;
    let config = TreeConfig { c, delta, l, kappa, omega, t, rng_seed };
    config.validate()?;
    let root = read_node(r, dims)?;
    Ok(BmkdTree {
        root,
        config,
        dims,
        resolved_t,
        seed_counter,
        mutation_counter,
        rebuild_log: Vec::new(),
    })
}

fn read_vec_f64<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(r.read_f64::<LittleEndian>()?);
    }
    Ok(out)
}

fn read_volumes<R: Read>(r: &mut R, dims: usize) -> Result<(Mbr, Mbb)> {
    let lo = read_vec_f64(r, dims)?;
    let hi = read_vec_f64(r, dims)?;
    let center = read_vec_f64(r, dims)?;
    let radius = r.read_f64::<LittleEndian>()?;
    Ok((Mbr { lo, hi }, Mbb { center, radius }))
}

fn read_node<R: Read>(r: &mut R, dims: usize) -> Result<Node> {
    match r.read_u8()? {
        0 => {
            let count = r.read_u64::<LittleEndian>()? as usize;
            let mut points = Vec::with_capacity(count);
            for _ in 0..count {
                let id = r.read_u64::<LittleEndian>()?;
                let coords = read_vec_f64(r, dims)?;
                points.push(Point { id, coords });
            }
            let (mbr, mbb) = read_volumes(r, dims)?;
            Ok(Node::Leaf(LeafNode { points, mbr, mbb }))
        }
        1 => {
            let split_dim = r.read_u32::<LittleEndian>()? as usize;
            if split_dim >= dims {
                return Err(UnisError::Data(format!(
                    "split dimension {split_dim} out of range for {dims} dims"
                )));
            }
            let size = r.read_u64::<LittleEndian>()? as usize;
            let n_pivots = r.read_u32::<LittleEndian>()? as usize;
            let pivots = read_vec_f64(r, n_pivots)?;
            let (mbr, mbb) = read_volumes(r, dims)?;
            let model = match r.read_u8()? {
                0 => None,
                1 => Some(read_model(r)?),
                tag => return Err(UnisError::Data(format!("unknown model tag {tag}"))),
            };
            let n_pending = r.read_u64::<LittleEndian>()? as usize;
            let pending = read_vec_f64(r, n_pending)?;
            let n_children = r.read_u32::<LittleEndian>()? as usize;
            if n_children != n_pivots + 1 {
                return Err(UnisError::Data(format!(
                    "inner node has {n_children} children for {n_pivots} pivots"
                )));
            }
            let mut children = Vec::with_capacity(n_children);
            for _ in 0..n_children {
                children.push(read_node(r, dims)?);
            }
            Ok(Node::Inner(NonLeafNode {
                split_dim,
                pivots,
                children,
                size,
                mbr,
                mbb,
                model,
                pending,
            }))
        }
        tag => Err(UnisError::Data(format!("unknown node tag {tag}"))),
    }
}

fn read_model<R: Read>(r: &mut R) -> Result<TwoStageCdfModel> {
    let alpha = r.read_f64::<LittleEndian>()?;
    let beta = r.read_f64::<LittleEndian>()?;
    let l = r.read_u64::<LittleEndian>()? as usize;
    let stats = SufficientStats {
        n_pts: r.read_u64::<LittleEndian>()? as usize,
        s_x: r.read_f64::<LittleEndian>()?,
        s_x2: r.read_f64::<LittleEndian>()?,
        s_u: r.read_f64::<LittleEndian>()?,
        s_xu: r.read_f64::<LittleEndian>()?,
    };
    let n_subs = r.read_u64::<LittleEndian>()? as usize;
    let mut subs = Vec::with_capacity(n_subs);
    for _ in 0..n_subs {
        subs.push(SubModel {
            x_min: r.read_f64::<LittleEndian>()?,
            x_max: r.read_f64::<LittleEndian>()?,
            cdf_min: r.read_f64::<LittleEndian>()?,
            cdf_max: r.read_f64::<LittleEndian>()?,
        });
    }
    let n_sample = r.read_u64::<LittleEndian>()? as usize;
    let mut sample = Vec::with_capacity(n_sample);
    for _ in 0..n_sample {
        let x = r.read_f64::<LittleEndian>()?;
        let u = r.read_f64::<LittleEndian>()?;
        sample.push((x, u));
    }
    Ok(TwoStageCdfModel { root: RootModel { alpha, beta, l, stats }, subs, sample })
}

pub fn save_tree_to_path<P: AsRef<Path>>(tree: &BmkdTree, path: P) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    save_tree(tree, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_tree_from_path<P: AsRef<Path>>(path: P) -> Result<BmkdTree> {
    let file = std::fs::File::open(path)?;
    load_tree(&mut BufReader::new(file))
}
