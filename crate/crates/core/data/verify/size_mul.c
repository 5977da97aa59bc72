#include <assert.h>
#include <stdint.h>

int main(void)
{
    uint32_t count = {{COUNT}}u;
    uint32_t size = {{SIZE}}u;
    uint32_t bytes = count * size;

    assert((uint64_t)bytes == (uint64_t)count * size);
    return 0;
}
