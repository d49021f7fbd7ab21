//! Seeded test scenes and the two-sphere edit benchmark.

use crate::backbone::Condition;
use crate::codec::{encode, CodecParams, TokenSet};
use crate::edit::EditRequest;
use crate::geometry::{render_view, BoundingBox, Channel, ImageGrid, Primitive, PrimitiveScene, TriangleMesh, ViewSpec};
use crate::{Result, Vec3};

/// Seeded random CSG scenes, one per index.
pub fn suite_scenes(count: usize, seed: u64) -> Vec<PrimitiveScene> {
    (0..count as u64)
        .map(|i| PrimitiveScene::random(seed.wrapping_mul(1_000_003).wrapping_add(i)))
        .collect()
}

pub fn two_spheres() -> PrimitiveScene {
    PrimitiveScene {
        primitives: vec![
            Primitive::sphere(Vec3::new(-0.45, 0.0, 0.0), 0.3),
            Primitive::sphere(Vec3::new(0.45, 0.0, 0.0), 0.3),
        ],
    }
}

/// Sphere A becomes a cube. The target image also shows sphere B slightly
/// moved and grown, so editable tokens that wander over to B pull its surface
/// off the source.
#[derive(Debug, Clone)]
pub struct EditBenchmark {
    pub source: PrimitiveScene,
    pub target: PrimitiveScene,
    pub edit_box: BoundingBox,
    pub view: ViewSpec,
    pub mask_dilation: usize,
}

impl Default for EditBenchmark {
    fn default() -> Self {
        Self::two_spheres(64)
    }
}

impl EditBenchmark {
    pub fn two_spheres(image_size: usize) -> Self {
        let a = Vec3::new(-0.45, 0.0, 0.0);
        let source = two_spheres();
        let target = PrimitiveScene {
            primitives: vec![
                Primitive::cuboid(a, Vec3::new(0.24, 0.24, 0.24)),
                Primitive::sphere(Vec3::new(0.55, 0.05, 0.0), 0.33),
            ],
        };
        let edit_box = source.primitives[0]
            .bounding_box()
            .union(&target.primitives[0].bounding_box())
            .inflate(0.06);
        Self {
            source,
            target,
            edit_box,
            view: ViewSpec::front(image_size),
            mask_dilation: 2,
        }
    }

    /// Silhouettes of the edited object before and after, dilated.
    pub fn mask(&self) -> ImageGrid {
        let before = PrimitiveScene { primitives: vec![self.source.primitives[0].clone()] };
        let after = PrimitiveScene { primitives: vec![self.target.primitives[0].clone()] };
        let mut m = silhouette(&before, &self.view);
        let b = silhouette(&after, &self.view);
        for (x, y) in m.pixels.iter_mut().zip(&b.pixels) {
            *x = x.max(*y);
        }
        m.dilated(self.mask_dilation)
    }

    pub fn meshes(&self, resolution: usize) -> Result<(TriangleMesh, TriangleMesh)> {
        Ok((self.source.mesh(resolution)?, self.target.mesh(resolution)?))
    }

    pub fn tokens(&self, codec: &CodecParams, seed: u64) -> Result<(TokenSet, TokenSet)> {
        let src = encode(&self.source.sample_surface(codec.n_surf, seed)?, codec, seed)?;
        let tgt = encode(
            &self.target.sample_surface(codec.n_surf, seed ^ 0x5555)?,
            codec,
            seed ^ 0x5555,
        )?;
        Ok((src, tgt))
    }

    pub fn request(&self, codec: &CodecParams, seed: u64) -> Result<EditRequest> {
        let (source_mesh, target_mesh) = self.meshes(codec.grid_resolution)?;
        let (source_tokens, target_tokens) = self.tokens(codec, seed)?;
        let source_view = Condition::new(render_view(&source_mesh, &self.view, Channel::Normal), self.view, None)?;
        let target_view = Condition::new(
            render_view(&target_mesh, &self.view, Channel::Normal),
            self.view,
            Some(target_tokens),
        )?;
        Ok(EditRequest {
            source_mesh,
            source_tokens,
            source_view,
            target_view,
            mask: self.mask(),
        })
    }
}

fn silhouette(scene: &PrimitiveScene, view: &ViewSpec) -> ImageGrid {
    let mesh = scene.mesh(96).expect("non-empty scene");
    render_view(&mesh, view, Channel::Silhouette)
}
