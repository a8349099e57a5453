// Generated CUDA translation; view bookkeeping erased.
#include <cuda_runtime.h>

#define BDL_BARRIER_ARM(i)
#define BDL_BARRIER_ARRIVE(i) __threadfence_block();
#define BDL_BARRIER_WAIT(i) __syncthreads();
#define BDL_CP_ASYNC(dst, src) (dst) = (src);

extern __shared__ unsigned char bdl_smem[];

__global__ void bdl_main() {
    const int smem_base = 0;
    (void)smem_base;
    {
        const int u0 = blockIdx.x;
        {
            const int u1 = threadIdx.x;
            {
                const int u2 = u1 % 32;
                float a0 = 1.0;
                float a1 = 2.0;
                float a2 = 3.0;
                float a3 = 4.0;
                float b0 = 5.0;
                float b1 = 6.0;
                float c0 = 0.0;
                float c1 = 0.0;
                float c2 = 0.0;
                float c3 = 0.0;
                asm volatile("mma.sync.aligned.m16n8k8.row.col.f32.tf32.tf32.f32 "
                             "{%0,%1,%2,%3}, {%4,%5,%6,%7}, {%8,%9}, {%0,%1,%2,%3};"
                             : "+f"(c0), "+f"(c1), "+f"(c2), "+f"(c3)
                             : "f"(a0), "f"(a1), "f"(a2), "f"(a3), "f"(b0), "f"(b1));
            }
        }
    }
}
