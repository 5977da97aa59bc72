#include <stdio.h>
#include <string.h>

struct frame {
    char buf[{{DEST_SIZE}}];
    char canary[16];
};

int main(void)
{
    struct frame f;
    unsigned char *p = (unsigned char *)&f;
    size_t n = {{WRITE_LEN}};
    size_t i;

    memset(&f, 0, sizeof f);
    memset(f.canary, 'C', sizeof f.canary);
    if (n > sizeof f)
        n = sizeof f;
    for (i = 0; i < n; i++)
        p[i] = 'A';

    for (i = 0; i < sizeof f.canary; i++) {
        if (f.canary[i] != 'C') {
            fprintf(stderr, "VULNAUDIT_CRASH wrote %zu bytes into %zu\n", (size_t){{WRITE_LEN}}, sizeof f.buf);
            return 1;
        }
    }
    return 0;
}
