#include "blobforge/field/occupancy.hpp"
#include "blobforge/core/error.hpp"
#include "blobforge/core/parallel.hpp"

#include <algorithm>
#include <cmath>

namespace bf {

OccupancyGrid OccupancyGrid::filled(const Aabb& bounds, bool value, int resolution) {
    if (resolution < 1) throw InvalidArgument("occupancy resolution must be positive");
    OccupancyGrid g;
    g.resolution = resolution;
    g.bounds = bounds;
    g.bits.assign(static_cast<std::size_t>(resolution) * resolution * resolution, value ? 1 : 0);
    return g;
}

Vec3 OccupancyGrid::voxel_center(int i, int j, int k) const {
    return bounds.lo + (Vec3(i, j, k) + Vec3::Constant(0.5)).cwiseProduct(voxel_size());
}

std::array<int, 3> OccupancyGrid::voxel_of(const Vec3& p) const {
    std::array<int, 3> v{};
    const Vec3 u = (p - bounds.lo).cwiseQuotient(bounds.size()) * resolution;
    for (int a = 0; a < 3; ++a) {
        if (!(u[a] >= 0.0 && u[a] <= resolution)) return {-1, -1, -1};
        v[a] = std::min(static_cast<int>(u[a]), resolution - 1);
    }
    return v;
}

bool OccupancyGrid::occupied(const Vec3& p) const {
    const auto v = voxel_of(p);
    return v[0] >= 0 && at(v[0], v[1], v[2]);
}

std::size_t OccupancyGrid::count() const {
    return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

bool OccupancyGrid::subset_of(const OccupancyGrid& o) const {
    if (o.bits.size() != bits.size()) return false;
    for (std::size_t i = 0; i < bits.size(); ++i)
        if (bits[i] && !o.bits[i]) return false;
    return true;
}

OccupancyGrid extract_occupancy(const RadianceField& field, double tau, int resolution, int stencil) {
    if (stencil < 1) throw InvalidArgument("occupancy stencil must be positive");
    OccupancyGrid g = OccupancyGrid::filled(field.bounds(), false, resolution);
    g.threshold = tau;
    const Vec3 vs = g.voxel_size();
    const std::size_t n = g.bits.size();
    parallel_chunks(n, 256, [&](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t idx = begin; idx < end; ++idx) {
            const int i = static_cast<int>(idx % resolution);
            const int j = static_cast<int>((idx / resolution) % resolution);
            const int k = static_cast<int>(idx / (static_cast<std::size_t>(resolution) * resolution));
            const Vec3 lo = g.bounds.lo + Vec3(i, j, k).cwiseProduct(vs);
            bool hit = false;
            for (int a = 0; a < stencil && !hit; ++a)
                for (int b = 0; b < stencil && !hit; ++b)
                    for (int c = 0; c < stencil && !hit; ++c) {
                        const Vec3 p = lo + Vec3((a + 0.5) / stencil, (b + 0.5) / stencil, (c + 0.5) / stencil).cwiseProduct(vs);
                        hit = field.density(p) >= tau;
                    }
            g.bits[idx] = hit ? 1 : 0;
        }
    });
    return g;
}

} // namespace bf
